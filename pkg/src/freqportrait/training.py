"""Losses, the Adam training loop, config files and metrics logs."""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import spectral
from .data import sample_training_pair
from .errors import ConfigError, ContractError, NonFiniteLossError
from .network import ModelConfig, build_model, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    percep: float = 0.01
    freq: float = 1.0

    def __post_init__(self):
        ws = (self.rec, self.percep, self.freq)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ConfigError(f"loss weights must be finite and non-negative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ConfigError("at least one loss weight must be positive")


# --- perceptual feature extractors ---------------------------------------------

class ConvPyramidExtractor(nn.Module):
    """Frozen conv pyramid standing in for a pretrained VGG feature extractor.

    Four stages of (3x3 conv, ReLU, 3x3 conv stride 2, ReLU) with widths
    16/32/64/128. Weights come from a seeded He-normal draw, or from a
    ``{name: array}`` mapping for externally trained weights.
    """

    def __init__(self, widths=(16, 32, 64, 128), seed=0, state=None):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages = []
            prev = 3
            for w in widths:
                stage = nn.Sequential(
                    nn.Conv2d(prev, w, 3, padding=1), nn.ReLU(),
                    nn.Conv2d(w, w, 3, stride=2, padding=1), nn.ReLU(),
                )
                for m in stage:
                    if isinstance(m, nn.Conv2d):
                        nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                        nn.init.zeros_(m.bias)
                stages.append(stage)
                prev = w
            self.stages = nn.ModuleList(stages)
        if state is not None:
            self.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in state.items()})
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class IdentityExtractor(nn.Module):
    """Single layer returning its input; perceptual loss becomes pixel MSE."""

    def forward(self, x):
        return [x]


def make_extractor(spec="random:0"):
    """Build an extractor from ``random[:seed]`` or ``identity``."""
    name, _, arg = spec.partition(":")
    if name == "random":
        return ConvPyramidExtractor(seed=int(arg) if arg else 0)
    if name == "identity":
        return IdentityExtractor()
    raise ConfigError(f"unknown extractor {spec!r}")


# --- losses -------------------------------------------------------------------

def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def reconstruction_loss(output, target):
    _same_shape(output, target)
    return (output - target).abs().mean()


def perceptual_loss(output, target, extractor):
    _same_shape(output, target)
    fo = extractor(output)
    ft = extractor(target)
    total = output.new_zeros(())
    for a, b in zip(fo, ft):
        total = total + ((a - b) ** 2).mean()
    return total


def total_loss(output, target, weights, extractor):
    """Weighted sum of the three terms, plus the unweighted terms as floats."""
    rec = reconstruction_loss(output, target)
    freq = spectral.frequency_loss(output, target)
    if weights.percep > 0:
        percep = perceptual_loss(output, target, extractor)
    else:
        # Skipped to save time; zero-weight terms contribute nothing.
        percep = output.new_zeros(())
    total = weights.rec * rec + weights.percep * percep + weights.freq * freq
    terms = {"rec": rec.item(), "percep": percep.item(), "freq": freq.item()}
    return total, terms


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    batch: int = 8
    steps: int = 2000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ckpt_interval: int = 0
    extractor: str = "random:0"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")

    def with_ablation(self, use_vefm=None, use_avfm=None, lambda_freq=None):
        model = self.model
        if use_vefm is not None:
            model = replace(model, use_vefm=use_vefm)
        if use_avfm is not None:
            model = replace(model, use_avfm=use_avfm)
        weights = self.weights if lambda_freq is None else replace(self.weights, freq=lambda_freq)
        return replace(self, model=model, weights=weights)


CONFIG_KEYS = ("image_size", "stages", "widths", "expansion", "lr", "batch", "steps", "seed",
               "lambda_rec", "lambda_percep", "lambda_freq", "use_vefm", "use_avfm",
               "ckpt_interval", "extractor")


def _parse_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_train_config(text):
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {k!r}")
        kv[k] = v
    d = TrainConfig()
    m = d.model
    try:
        model = ModelConfig(
            image_size=int(kv.get("image_size", m.image_size)),
            stages=int(kv.get("stages", m.stages)),
            widths=tuple(int(x) for x in kv["widths"].split(",")) if "widths" in kv else m.widths,
            expansion=int(kv.get("expansion", m.expansion)),
            use_vefm=_parse_bool(kv["use_vefm"]) if "use_vefm" in kv else m.use_vefm,
            use_avfm=_parse_bool(kv["use_avfm"]) if "use_avfm" in kv else m.use_avfm,
            seed=int(kv.get("seed", m.seed)),
        )
        return TrainConfig(
            model=model,
            lr=float(kv.get("lr", d.lr)),
            batch=int(kv.get("batch", d.batch)),
            steps=int(kv.get("steps", d.steps)),
            seed=int(kv.get("seed", d.seed)),
            weights=LossWeights(float(kv.get("lambda_rec", d.weights.rec)),
                                float(kv.get("lambda_percep", d.weights.percep)),
                                float(kv.get("lambda_freq", d.weights.freq))),
            ckpt_interval=int(kv.get("ckpt_interval", d.ckpt_interval)),
            extractor=kv.get("extractor", d.extractor),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_train_config(path):
    return parse_train_config(Path(path).read_text())


def format_train_config(cfg):
    m, w = cfg.model, cfg.weights
    rows = [
        ("image_size", m.image_size), ("stages", m.stages),
        ("widths", ",".join(map(str, m.widths))), ("expansion", m.expansion),
        ("lr", repr(cfg.lr)), ("batch", cfg.batch), ("steps", cfg.steps), ("seed", cfg.seed),
        ("lambda_rec", repr(w.rec)), ("lambda_percep", repr(w.percep)), ("lambda_freq", repr(w.freq)),
        ("use_vefm", str(m.use_vefm).lower()), ("use_avfm", str(m.use_avfm).lower()),
        ("ckpt_interval", cfg.ckpt_interval), ("extractor", cfg.extractor),
    ]
    return "".join(f"{k} = {v}\n" for k, v in rows)


# --- training loop ------------------------------------------------------------

METRIC_FIELDS = ("step", "total", "rec", "percep", "freq")


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"step": int(r["step"]), **{k: float(r[k]) for k in METRIC_FIELDS[1:]}} for r in rows]


def make_batch(video, features, rng, batch, dtype=torch.float32):
    samples = [sample_training_pair(video, features, rng) for _ in range(batch)]
    ref = torch.as_tensor(np.stack([s.reference.pixels for s in samples]), dtype=dtype)
    msk = torch.as_tensor(np.stack([s.masked.pixels for s in samples]), dtype=dtype)
    aud = torch.as_tensor(np.stack([s.audio.reshaped for s in samples]), dtype=dtype)
    tgt = torch.as_tensor(np.stack([s.target.pixels for s in samples]), dtype=dtype)
    return ref, msk, aud, tgt


def make_optimizer(model, lr):
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


@dataclass
class TrainResult:
    model: nn.Module
    metrics: list
    checkpoints: list = field(default_factory=list)


def train(video, features, config, model=None, out_dir=None, extractor=None, progress=None):
    """Fit ``model`` (built from ``config.model`` if omitted) with Adam.

    Each logged row holds the loss of the batch *before* that step's update,
    so row 0 is the untrained loss. With ``out_dir`` set, checkpoints are
    written every ``ckpt_interval`` steps plus ``model.frk`` and
    ``metrics.csv`` at the end.
    """
    if model is None:
        model = build_model(config.model)
    if extractor is None:
        extractor = make_extractor(config.extractor)
    dtype = next(model.parameters()).dtype
    extractor = extractor.to(dtype)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(model, config.lr)
    model.train()
    metrics, ckpts = [], []
    for step in range(config.steps):
        ref, msk, aud, tgt = make_batch(video, features, rng, config.batch, dtype)
        pred = model(ref, msk, aud)
        loss, terms = total_loss(pred, tgt, config.weights, extractor)
        if not torch.isfinite(loss):
            dump = None
            if out is not None:
                dump = out / f"nonfinite_batch_step{step:06d}.npz"
                np.savez(dump, reference=ref.numpy(), masked=msk.numpy(), audio=aud.numpy(),
                         target=tgt.numpy(), output=pred.detach().numpy())
            raise NonFiniteLossError(step, dump)
        metrics.append({"step": step, "total": loss.item(), **terms})
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if progress is not None:
            progress(metrics[-1])
        if out is not None and config.ckpt_interval > 0 and (step + 1) % config.ckpt_interval == 0:
            p = out / f"ckpt_{step + 1:06d}.frk"
            save_checkpoint(p, model)
            ckpts.append(p)
    model.eval()
    if out is not None:
        save_checkpoint(out / "model.frk", model)
        write_metrics(out / "metrics.csv", metrics)
        (out / "config.txt").write_text(format_train_config(config))
    return TrainResult(model, metrics, ckpts)
