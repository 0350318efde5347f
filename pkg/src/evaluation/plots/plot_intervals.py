from pathlib import Path
from typing import Union

import matplotlib.pyplot as plt
import numpy as np

from src.evaluation.metrics.bootstrap import DEFINING_RATIO, CoefficientCI
from src.evaluation.plots.svg import save_svg
from src.utils import pylogger

log = pylogger.CommandLogger(__name__)


def plot_intervals(ci: CoefficientCI, pattern: int, path: Union[str, Path], ratio: float = DEFINING_RATIO) -> Path:
    """Bootstrap means as bars with percentile-interval whiskers for one pattern (0-based index).

    Defining features, see :meth:`CoefficientCI.defining`, are drawn in a second colour. Bars carry the SVG id
    ``coef_<feature>`` or ``defining_<feature>``.
    """
    if not 0 <= pattern < len(ci.labels):
        raise ValueError(f"Pattern index {pattern} out of range for {len(ci.labels)} patterns")
    names = ci.feature_names
    mean = ci.boot_mean[:, pattern]
    lower, upper = ci.lower[:, pattern], ci.upper[:, pattern]
    defining = ci.defining(ratio)[:, pattern]

    positions = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.3 * len(names) + 1.0), 3), constrained_layout=True)
    fig.patch.set_facecolor("white")
    colors = np.where(defining, "tab:orange", "tab:blue")
    bars = ax.bar(positions, mean, width=0.7, color=colors)
    for name, bar, is_defining in zip(names, bars, defining):
        bar.set_gid(f"{'defining' if is_defining else 'coef'}_{name}")
    # whiskers span [lower, upper]
    ax.vlines(positions, lower, upper, color="k", linewidth=0.8)
    caps = np.concatenate([lower, upper])
    ax.hlines(caps, np.tile(positions - 0.15, 2), np.tile(positions + 0.15, 2), color="k", linewidth=0.8)
    ax.plot(positions, mean, "o", color="k", markersize=3)

    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("Coefficient", fontsize=8)
    ax.set_ylim(bottom=0.0)
    ax.set_title(f"{ci.labels[pattern]}: bootstrap means and {100 * ci.level:g}% intervals (B={ci.b})", fontsize=9)

    log.info(f"Writing interval plot to {path}")
    return save_svg(fig, path)
