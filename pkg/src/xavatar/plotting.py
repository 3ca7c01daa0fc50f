"""Report figures. Uses the non-interactive Agg backend and fixed metadata so
repeated runs write identical PNGs."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import atomic_write  # noqa: E402

_RC = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False,
       "figure.dpi": 100, "savefig.bbox": "tight"}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def depth_comparison(rendered, reference, path, title="depth"):
    """Rendered / reference / squared-error panels."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
        valid = (rendered > 0) & (reference > 0)
        err = np.where(valid, (rendered - reference) ** 2, np.nan)
        vmax = max(float(np.max(rendered)), float(np.max(reference)), 1e-9)
        for ax, img, name in zip(axes[:2], (rendered, reference), ("rendered", "reference")):
            im = ax.imshow(np.where(img > 0, img, np.nan), cmap="viridis", vmin=0, vmax=vmax)
            ax.set_title(name)
            ax.axis("off")
        fig.colorbar(im, ax=axes[:2], shrink=0.8, label="m")
        im = axes[2].imshow(err, cmap="magma")
        axes[2].set_title("squared error")
        axes[2].axis("off")
        fig.colorbar(im, ax=axes[2], shrink=0.8, label="m$^2$")
        fig.suptitle(title)
        return _save(fig, path)


def metric_bars(values: dict, path, title="metrics"):
    with plt.rc_context(_RC):
        names = list(values)
        fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(names), 3))
        ax.bar(range(len(names)), [values[n] for n in names], color="0.35")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_title(title)
        return _save(fig, path)


def sdf_histograms(samples: dict, path, bins=60):
    """One histogram per named sample array (e.g. sdf, base_sdf, eikonal residual)."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(samples), figsize=(3.2 * len(samples), 2.8), squeeze=False)
        for ax, (name, vals) in zip(axes[0], samples.items()):
            vals = np.asarray(vals, dtype=np.float64).ravel()
            ax.hist(vals[np.isfinite(vals)], bins=bins, color="0.35")
            ax.set_title(name)
        return _save(fig, path)


def loss_terms(terms: dict, coefficients: dict, path):
    """Raw vs weighted contribution of each generator term."""
    with plt.rc_context(_RC):
        names = list(terms)
        raw = [terms[n] for n in names]
        weighted = [terms[n] * coefficients.get(n, 1.0) for n in names]
        x = np.arange(len(names))
        fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(names), 3))
        ax.bar(x - 0.2, raw, 0.4, label="raw", color="0.65")
        ax.bar(x + 0.2, weighted, 0.4, label="weighted", color="0.25")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_yscale("symlog", linthresh=1e-4)
        ax.legend(frameon=False)
        return _save(fig, path)
