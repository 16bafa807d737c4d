"""
Figures SVG statiques du survey (histogrammes colorés par pic, faisceaux de contrôles).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .survey import ManifoldBundle, SurveySummary  # noqa: E402

log = logging.getLogger(__name__)

# pic de gauche en vert, pic de droite en rouge
PEAK_COLORS = ("tab:green", "tab:red")


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    log.debug("SVG écrit: %s", path)
    return path


def plot_histogram_svg(
    path: Path,
    values: np.ndarray,
    labels: Optional[np.ndarray],
    bins: int,
    title: str,
) -> Path:
    values = np.asarray(values, dtype=float)
    edges = np.linspace(values.min(), values.max(), bins + 1) if values.size else bins
    fig, ax = plt.subplots(figsize=(6, 4))
    if labels is None or values.size == 0:
        ax.hist(values, bins=edges, color="tab:blue")
    else:
        for p in sorted(set(labels.tolist())):
            ax.hist(values[labels == p], bins=edges, color=PEAK_COLORS[p % 2], label=f"pic {p + 1}")
        ax.legend()
    ax.set_title(title)
    ax.set_xlabel("valeur optimisée")
    ax.set_ylabel("nombre de runs")
    return _save(fig, path)


def plot_summary_histograms(out_dir: Path, summary: SurveySummary) -> list[Path]:
    """Deux histogrammes (objectif, Frobenius) avec l'appartenance aux pics de l'objectif."""
    normal = [(r, lab) for r, lab in zip(summary.records, summary.labels) if r.normal]
    if not normal:
        return []
    labels = np.array([lab for _, lab in normal])
    bins = int(summary.config.get("bins", 100))
    return [
        plot_histogram_svg(
            out_dir / "histogram_objective.svg",
            np.array([r.objective for r, _ in normal]), labels, bins, summary.objective_label,
        ),
        plot_histogram_svg(
            out_dir / "histogram_frobenius.svg",
            np.array([r.frobenius for r, _ in normal]), labels, bins, summary.frobenius_label,
        ),
    ]


def plot_manifolds_svg(path: Path, bundles: Sequence[ManifoldBundle], title: str) -> Path:
    """u(t) et n(t) constants par morceaux, un trait par run, couleur par pic."""
    fig, (ax_u, ax_n) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for bundle in bundles:
        t = np.asarray(bundle.boundaries)
        color = PEAK_COLORS[(bundle.peak - 1) % 2]
        for u_row, n_row in zip(bundle.u, bundle.n):
            # "post" : valeur k tenue sur [t_k, t_{k+1}]
            ax_u.step(t, np.append(u_row, u_row[-1]), where="post", color=color, alpha=0.3, lw=0.8)
            ax_n.step(t, np.append(n_row, n_row[-1]), where="post", color=color, alpha=0.3, lw=0.8)
    ax_u.axhline(0.0, color="black", lw=0.5)
    ax_u.set_ylabel("u(t)")
    ax_n.set_ylabel("n(t)")
    ax_n.set_xlabel("t")
    ax_u.set_title(title)
    return _save(fig, path)
