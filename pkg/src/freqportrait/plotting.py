"""Figures written next to the CSV reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "freqportrait",
}

# No Software/date stamps, so regenerated figures are byte-identical.
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_spectrum(report, path):
    with plt.rc_context(STYLE):
        fig, (ax_img, ax_prof) = plt.subplots(1, 2, figsize=(8, 3.4))
        im = ax_img.imshow(report.image, cmap="inferno", origin="upper")
        ax_img.set_title(f"averaged log1p |FFT| ({report.frame_count} frames)")
        ax_img.set_xticks([])
        ax_img.set_yticks([])
        fig.colorbar(im, ax=ax_img, fraction=0.046, pad=0.04)

        n = len(report.profile)
        centers = (np.arange(n) + 0.5) / n
        prof = np.maximum(report.profile, np.finfo(float).tiny)
        ax_prof.semilogy(centers, prof, marker="o", ms=2.5, lw=1)
        for edge in (1 / 3, 2 / 3):
            ax_prof.axvline(edge, color="0.6", lw=0.8, ls="--")
        lo, mid, hi = report.bands
        ax_prof.set_title(f"bands low/mid/high = {lo:.3g} / {mid:.3g} / {hi:.3g}")
        ax_prof.set_xlabel("normalized radius")
        ax_prof.set_ylabel("energy")
        fig.tight_layout()
        _save(fig, path)


def plot_ablation(rows, path):
    done = [r for r in rows if r["status"] == "done"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        names = [r["variant"] for r in done]
        x = np.arange(len(done))
        for ax, key, label in zip(axes, ("total", "psnr", "spectral_gap"),
                                  ("final total loss", "train PSNR (dB)", "spectral gap")):
            ax.bar(x, [r[key] for r in done], color="0.35")
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=30, ha="right")
            ax.set_title(label)
        fig.tight_layout()
        _save(fig, path)


def plot_losses(metrics, path):
    steps = [r["step"] for r in metrics]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for key in ("total", "rec", "freq"):
            ax.semilogy(steps, [max(r[key], 1e-12) for r in metrics], lw=1, label=key)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
