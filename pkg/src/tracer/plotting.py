"""Matplotlib figures written to files (Agg backend, no interactive display)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so identical inputs give identical files
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def _image(values: np.ndarray) -> np.ndarray:
    """2-D view of a sample-shaped map (channels averaged, flat vectors as one row)."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 3:
        return a.mean(axis=0)
    if a.ndim == 1:
        return a[None, :]
    return a


def cka_heatmap(values: np.ndarray, labels: Sequence[str], path: str | Path, epsilon: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(np.nan_to_num(values, nan=0.0), vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    title = "CKA"
    if epsilon is not None:
        title += f" (threshold {1 - epsilon:.3g})"
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _save(fig, path)


def attribution_figure(x: np.ndarray, maps: dict[str, np.ndarray], path: str | Path,
                       feature_names: Sequence[str] | None = None) -> Path:
    """Input next to signed attribution maps (red supports the prediction)."""
    panels = len(maps) + 1
    fig, axes = plt.subplots(1, panels, figsize=(2.6 * panels, 2.8), squeeze=False)
    axes = axes[0]
    axes[0].imshow(_image(x), cmap="gray")
    axes[0].set_title("input")
    for ax, (name, m) in zip(axes[1:], maps.items()):
        img = _image(m)
        lim = float(np.abs(img).max()) or 1.0
        ax.imshow(img, cmap="bwr", vmin=-lim, vmax=lim)
        ax.set_title(name)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if feature_names is not None and np.asarray(x).ndim == 1:
        axes[0].set_xticks(range(len(feature_names)), feature_names, rotation=90, fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def reliability_bars(rows: Sequence[dict], path: str | Path) -> Path:
    names = [r["method"] for r in rows]
    means = [r["mean"] for r in rows]
    stds = [0.0 if np.isnan(r["std"]) else r["std"] for r in rows]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(names, means, yerr=stds, capsize=4, color="#4C72B0")
    ax.set_ylim(0, 1)
    ax.set_ylabel("reliability S")
    fig.tight_layout()
    return _save(fig, path)


def coverage_plot(levels: Sequence[tuple[int, float, float]], path: str | Path) -> Path:
    nodes = [n for n, _, _ in levels]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([str(n) for n in nodes], [c for _, c, _ in levels], color="#55A868", label="coverage")
    ax.plot([str(n) for n in nodes], [c for _, _, c in levels], "o-", color="k", label="cumulative")
    ax.set_xlabel("causal nodes")
    ax.set_ylabel("fraction of samples")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def training_curve(curve: Sequence[dict], keys: Sequence[str], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3))
    steps = [c["step"] for c in curve]
    for k in keys:
        vals = [c.get(k, float("nan")) for c in curve]
        if not all(np.isnan(vals)):
            ax.plot(steps, vals, label=k)
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def counterfactual_figure(x: np.ndarray, x_star: np.ndarray, path: str | Path) -> Path:
    diff = np.asarray(x_star) - np.asarray(x)
    return attribution_figure(x, {"counterfactual": x_star, "x* - x": diff}, path)
