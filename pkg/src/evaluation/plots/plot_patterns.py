from pathlib import Path
from typing import Optional, Union

import matplotlib.pyplot as plt
import numpy as np

from src.evaluation.plots.svg import save_svg
from src.models.nmf import FactorPair, learner_index, reconstruct
from src.utils import pylogger

log = pylogger.CommandLogger(__name__)

PANEL_WIDTH = 3.0
PANEL_HEIGHT_PER_FEATURE = 0.18


def _feature_names(fp: FactorPair) -> tuple[str, ...]:
    return fp.feature_names or tuple(f"feature_{i + 1}" for i in range(fp.p_mat.rows))


def _bar_panel(ax, values: np.ndarray, names, title: str, gid_prefix: str, color="tab:blue"):
    positions = np.arange(len(names))
    bars = ax.barh(positions, values, color=color, height=0.7)
    for name, bar in zip(names, bars):
        bar.set_gid(f"{gid_prefix}_{name}")
    ax.set_yticks(positions)
    ax.set_yticklabels(names, fontsize=7)
    ax.invert_yaxis()
    ax.set_title(title, fontsize=9)
    ax.tick_params(axis="x", labelsize=7)
    return bars


def plot_patterns(fp: FactorPair, path: Union[str, Path]) -> Path:
    """One horizontal bar panel per pattern, one bar per feature coefficient.

    Bars carry the SVG id ``coef_<pattern>_<feature>``.
    """
    names = _feature_names(fp)
    height = max(2.0, PANEL_HEIGHT_PER_FEATURE * len(names) + 1.0)
    fig, axes = plt.subplots(1, fp.k, figsize=(PANEL_WIDTH * fp.k, height), sharey=True, squeeze=False)
    fig.patch.set_facecolor("white")
    for j, (ax, label) in enumerate(zip(axes[0], fp.labels)):
        _bar_panel(ax, fp.p_mat.data[:, j], names, label, f"coef_{label}")
        ax.set_xlabel("Coefficient", fontsize=8)
    fig.tight_layout()
    log.info(f"Writing pattern plot to {path}")
    return save_svg(fig, path)


def plot_learner(
    fp: FactorPair,
    learner: Union[int, str],
    path: Union[str, Path],
    observed: Optional[np.ndarray] = None,
) -> Path:
    """Observed against reconstructed features of one learner, above the learner's scaled patterns.

    The bottom row shows ``A[j, k] * P[:, k]`` for every pattern, the terms that add up to the reconstruction.
    Scaled bars carry the SVG id ``scaled_<pattern>_<feature>``.
    """
    names = _feature_names(fp)
    j = learner_index(fp, learner)
    learner_id = fp.learner_ids[j] if fp.learner_ids else f"learner_{j + 1}"
    fitted = reconstruct(fp, j)
    affinities = fp.a_mat.data[j]

    height = max(2.0, PANEL_HEIGHT_PER_FEATURE * len(names) + 1.0)
    fig = plt.figure(figsize=(PANEL_WIDTH * fp.k, 2 * height))
    fig.patch.set_facecolor("white")
    grid = fig.add_gridspec(2, fp.k)
    top = fig.add_subplot(grid[0, :])
    bottom = [fig.add_subplot(grid[1, k]) for k in range(fp.k)]
    positions = np.arange(len(names))
    if observed is not None:
        top.bar(positions - 0.2, observed, width=0.4, color="0.6", label="Observed")
    top.bar(positions + 0.2, fitted, width=0.4, color="tab:blue", label="Reconstructed")
    top.set_xticks(positions)
    top.set_xticklabels(names, rotation=90, fontsize=7)
    top.set_title(f"Learner {learner_id}", fontsize=9)
    top.legend(fontsize=7)

    for k, (ax, label) in enumerate(zip(bottom, fp.labels)):
        _bar_panel(ax, affinities[k] * fp.p_mat.data[:, k], names, f"{label} ({affinities[k]:.2f})", f"scaled_{label}")
    fig.tight_layout()
    log.info(f"Writing reconstruction plot to {path}")
    return save_svg(fig, path)
