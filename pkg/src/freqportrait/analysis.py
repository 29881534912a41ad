"""Averaged-spectrum reports, spectral gap, PSNR, runtime benchmark and ablations."""

import csv
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import spectral
from .data import LOWER_HALF, apply_mask, load_frames, window_audio
from .errors import ContractError, DatasetError
from .network import build_model, model_forward
from .training import train

PSNR_CAP = 99.0
PROFILE_BINS = 32


@dataclass
class SpectrumReport:
    image: np.ndarray  # log1p of the frame-averaged magnitude, DC centered
    profile: np.ndarray  # mean radial energy per bin
    bands: np.ndarray  # low / mid / high energy ratios
    dc_fraction: float
    frame_count: int


def _gray_stack(frames):
    if len(frames) == 0:
        raise DatasetError("no frames to analyze")
    arrays = [f.pixels if hasattr(f, "pixels") else np.asarray(f) for f in frames]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DatasetError(f"frames have mixed sizes: {sorted(shapes)}")
    return np.stack([a.astype(np.float64).mean(axis=0) for a in arrays])


def analyze_frames(frames, n_bins=PROFILE_BINS):
    gray = torch.from_numpy(_gray_stack(frames))
    spec = spectral.fft2(gray)
    mag = spec.data.abs().numpy()
    avg_mag = mag.mean(axis=0)
    image = np.fft.fftshift(np.log1p(avg_mag))
    n = len(gray)
    profile = spectral.radial_energy_profile(spec, n_bins) / n
    thirds = spectral.radial_energy_profile(spec, 3)
    total = thirds.sum()
    bands = thirds / total if total > 0 else np.array([1.0, 0.0, 0.0])
    power = mag ** 2
    dc = power[:, 0, 0].sum()
    dc_fraction = float(dc / power.sum()) if power.sum() > 0 else 1.0
    return SpectrumReport(image, profile, bands, dc_fraction, n)


def analyze_spectrum(frame_dir, n_bins=PROFILE_BINS):
    return analyze_frames(load_frames(frame_dir), n_bins)


def _report(x):
    if isinstance(x, SpectrumReport):
        return x
    if isinstance(x, (str, Path)):
        return analyze_spectrum(x)
    return analyze_frames(x)


def spectral_gap(a, b):
    """Mean absolute difference of two averaged log-magnitude spectra.

    ``a`` and ``b`` may be frame directories, frame lists or reports.
    """
    ra, rb = _report(a), _report(b)
    if ra.image.shape != rb.image.shape:
        raise ContractError(f"resolution mismatch: {ra.image.shape} vs {rb.image.shape}")
    return float(np.abs(ra.image - rb.image).mean())


def _pixels(frames):
    if isinstance(frames, (str, Path)):
        frames = load_frames(frames)
    return [f.pixels if hasattr(f, "pixels") else np.asarray(f) for f in frames]


def psnr(frames_a, frames_b):
    """PSNR in dB over all pixels of two equal-length sequences; capped at 99 dB."""
    pa, pb = _pixels(frames_a), _pixels(frames_b)
    if len(pa) != len(pb):
        raise ContractError(f"frame count mismatch: {len(pa)} vs {len(pb)}")
    if len(pa) == 0:
        raise ContractError("no frames")
    sq, count = 0.0, 0
    for x, y in zip(pa, pb):
        if x.shape != y.shape:
            raise ContractError(f"frame shape mismatch: {x.shape} vs {y.shape}")
        d = x.astype(np.float64) - y.astype(np.float64)
        sq += float((d * d).sum())
        count += d.size
    mse = sq / count
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def write_spectrum_report(report, out_dir):
    from .plotting import plot_spectrum

    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "profile.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "radius_lo", "radius_hi", "energy"])
        n = len(report.profile)
        for i, e in enumerate(report.profile):
            w.writerow([i, repr(i / n), repr((i + 1) / n), repr(float(e))])
    with open(d / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["band", "ratio"])
        for name, r in zip(("low", "mid", "high"), report.bands):
            w.writerow([name, repr(float(r))])
        w.writerow(["dc_fraction", repr(report.dc_fraction)])
        w.writerow(["frames", report.frame_count])
    plot_spectrum(report, d / "spectrum.png")


# --- runtime ------------------------------------------------------------------

def hardware_string():
    return f"{platform.machine()} {platform.processor() or 'cpu'} torch-threads={torch.get_num_threads()}"


def benchmark(model, n=100, warmup=5, seed=0):
    """Time per-frame synthesis on random inputs; returns a dict of statistics."""
    if n < 1:
        raise ContractError("n must be >= 1")
    cfg = model.config
    g = torch.Generator().manual_seed(seed)
    size = cfg.image_size
    ref = torch.rand(1, 3, size, size, generator=g)
    msk = ref.clone()
    aud = torch.randn(1, 32, 32, 32, generator=g)
    model.eval()
    times = []
    with torch.no_grad():
        for _ in range(warmup):
            model(ref, msk, aud)
        for _ in range(n):
            t0 = time.perf_counter()
            model(ref, msk, aud)
            times.append((time.perf_counter() - t0) * 1e3)
    t = np.asarray(times)
    return {
        "resolution": size,
        "stages": cfg.stages,
        "frames": n,
        "mean_ms": float(t.mean()),
        "p50_ms": float(np.percentile(t, 50)),
        "p95_ms": float(np.percentile(t, 95)),
        "hardware": hardware_string(),
    }


def format_benchmark(report):
    keys = ("resolution", "stages", "frames", "mean_ms", "p50_ms", "p95_ms", "hardware")
    lines = []
    for k in keys:
        v = report[k]
        lines.append(f"{k}\t{v:.3f}" if isinstance(v, float) else f"{k}\t{v}")
    return "\n".join(lines)


# --- ablation -----------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no_vefm", "no_avfm", "no_freq")
ABLATION_FIELDS = ("variant", "status", "steps", "total", "rec", "percep", "freq", "psnr", "spectral_gap")


def variant_config(base, name):
    if name == "full":
        return base
    if name == "no_vefm":
        return base.with_ablation(use_vefm=False)
    if name == "no_avfm":
        return base.with_ablation(use_avfm=False)
    if name == "no_freq":
        return base.with_ablation(lambda_freq=0.0)
    raise ValueError(name)


def dubbing_reconstruction(model, frames, features):
    out = []
    for j, fr in enumerate(frames[:len(features)]):
        out.append(model_forward(fr, apply_mask(fr, LOWER_HALF), window_audio(features, j), model))
    return out


def ablate(frames, features, base_config, time_budget=None, progress=None):
    """Train the four variants under one seed and step budget.

    Returns one row per variant. If ``time_budget`` seconds run out, the
    remaining variants are reported with status ``skipped``; the first
    variant always runs.
    """
    rows = []
    start = time.perf_counter()
    for name in ABLATION_VARIANTS:
        if rows and time_budget is not None and time.perf_counter() - start > time_budget:
            rows.append({"variant": name, "status": "skipped", "steps": 0,
                         **{k: float("nan") for k in ABLATION_FIELDS[3:]}})
            continue
        cfg = variant_config(base_config, name)
        result = train(frames, features, cfg, model=build_model(cfg.model))
        last = result.metrics[-1] if result.metrics else {"total": float("nan"), "rec": float("nan"),
                                                          "percep": float("nan"), "freq": float("nan")}
        recon = dubbing_reconstruction(result.model, frames, features)
        truth = frames[:len(recon)]
        rows.append({
            "variant": name,
            "status": "done",
            "steps": len(result.metrics),
            "total": last["total"],
            "rec": last["rec"],
            "percep": last["percep"],
            "freq": last["freq"],
            "psnr": psnr(recon, truth),
            "spectral_gap": spectral_gap(recon, truth),
        })
        if progress is not None:
            progress(rows[-1])
    return rows


def write_ablation(rows, out_dir):
    from .plotting import plot_ablation

    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_FIELDS)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], str) or k == "steps" else repr(float(r[k]))
                        for k in ABLATION_FIELDS])
    plot_ablation(rows, d / "ablation.png")
    return d / "ablation.csv"
