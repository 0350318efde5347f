"""Nonparametric bootstrap over learners for the pattern coefficients of a reference fit."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.models.alignment import align
from src.models.matrix import Matrix
from src.models.nmf import FactorPair, FitConfig, fit, permute
from src.utils import pylogger
from src.utils.seeding import BOOTSTRAP_STREAM, derive_seed, get_rng

log = pylogger.CommandLogger(__name__)

DEFINING_RATIO = 0.5


@dataclass(frozen=True)
class BootstrapConfig:
    """Bootstrap settings.

    ``refit`` re-estimates ``(P_b, A_b)`` per replication; otherwise the reference affinities are reused
    (fast mode, only meaningful for the group test). Each refit is a full :func:`fit` under the fit
    configuration, seeded per replication, with ``restarts`` overriding its restart count when set.
    ``warm_start`` opts into starting the first restart from the reference patterns, which is faster but ties
    every replication to the reference solution. A replication whose fit fails is redrawn with a fresh seed up
    to ``max_attempts`` times.
    """

    b: int = 10_000
    level: float = 0.99
    seed: int = 0
    refit: bool = True
    warm_start: bool = False
    restarts: Optional[int] = None
    max_attempts: int = 5

    def __post_init__(self):
        if self.b < 1:
            raise ValueError(f"b must be at least 1, got {self.b}")
        if not 0 < self.level < 1:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")
        if self.seed < 0:
            raise ValueError(f"seed must be an unsigned integer, got {self.seed}")
        if self.restarts is not None and self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be at least 1, got {self.max_attempts}")

    @property
    def alpha(self) -> float:
        return 1.0 - self.level


class BootstrapError(RuntimeError):
    """A replication kept failing after all redraws."""


def empirical_quantile(values, p: float) -> float:
    """Empirical ``p``-quantile with linear interpolation at rank ``h = (n - 1) p``."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("Cannot take the quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Quantile level must lie in [0, 1], got {p}")
    return float(np.quantile(values, p, method="linear"))


def resample_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` learner positions with replacement."""
    return rng.integers(0, n, size=n)


def refit_replicate(
    x: Matrix,
    indices: np.ndarray,
    cfg_fit: FitConfig,
    cfg_boot: BootstrapConfig,
    reference: FactorPair,
    seed: int,
) -> FactorPair:
    """Fit the learner resample ``x[:, indices]`` and align its patterns to ``reference``."""
    cfg = replace(cfg_fit, seed=seed, restarts=cfg_boot.restarts or cfg_fit.restarts)
    init_p = reference.p_mat.data if cfg_boot.warm_start else None
    replicate = fit(x.select_columns(indices), cfg, init_p=init_p)
    alignment = align(reference, replicate)
    return permute(replicate, alignment.perm)


def draw_replicate(
    x: Matrix,
    cfg_fit: FitConfig,
    cfg_boot: BootstrapConfig,
    reference: FactorPair,
    stream: int,
    index: int,
) -> tuple[FactorPair, np.ndarray, np.random.Generator, int]:
    """Resample and refit replication ``index``, redrawing on numerical failure.

    :return: The aligned replicate, its resample indices, the generator it was drawn from (for any further
        draws of the same replication) and the number of failed attempts.
    """
    failures = []
    for attempt in range(cfg_boot.max_attempts):
        rng = get_rng(cfg_boot.seed, stream, index, attempt)
        indices = resample_indices(rng, x.cols)
        seed = derive_seed(cfg_boot.seed, stream, index, attempt)
        try:
            replicate = refit_replicate(x, indices, cfg_fit, cfg_boot, reference, seed)
        except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as ex:
            log.warning(f"Replication {index} attempt {attempt} failed: {ex}")
            failures.append(str(ex))
            continue
        return replicate, indices, rng, attempt
    raise BootstrapError(
        f"Replication {index} failed {cfg_boot.max_attempts} times (pathological data?); last error: {failures[-1]}"
    )


@dataclass(frozen=True)
class CoefficientCI:
    """Per (feature, pattern) bootstrap means and percentile intervals of the pattern coefficients."""

    boot_mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    feature_names: tuple[str, ...]
    labels: tuple[str, ...]
    level: float
    b: int
    retries: int = 0

    def __post_init__(self):
        if not (self.lower <= self.upper).all():
            raise ValueError("Percentile intervals must satisfy lower <= upper")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def significant(self) -> np.ndarray:
        """Coefficients whose interval excludes zero."""
        return self.lower > 0

    def defining(self, ratio: float = DEFINING_RATIO) -> np.ndarray:
        """Coefficients with a bootstrap mean of at least ``ratio`` times their pattern maximum and an interval
        excluding zero."""
        peak = self.boot_mean.max(axis=0, keepdims=True)
        return (self.boot_mean >= ratio * peak) & (peak > 0) & self.significant()

    def to_frame(self) -> pd.DataFrame:
        p, k = self.boot_mean.shape
        return pd.DataFrame(
            {
                "feature": [self.feature_names[i] for _ in range(k) for i in range(p)],
                "pattern": [self.labels[j] for j in range(k) for _ in range(p)],
                "boot_mean": self.boot_mean.T.ravel(),
                "lower": self.lower.T.ravel(),
                "upper": self.upper.T.ravel(),
            }
        )


def bootstrap_ci(
    x: Matrix,
    cfg_fit: FitConfig,
    cfg_boot: BootstrapConfig,
    reference: FactorPair,
    progress: bool = False,
) -> CoefficientCI:
    """Percentile bootstrap intervals for the coefficients of ``reference.p_mat``.

    Every replication resamples the learners with replacement, refits, aligns the refit to ``reference`` and
    records its (rescaled) patterns. Statistics are collected per replication index and reduced afterwards, so
    the result does not depend on the order replications ran in.

    :param x: The matrix ``reference`` was fitted on.
    :param cfg_fit: The configuration ``reference`` was fitted with.
    :param cfg_boot: Bootstrap configuration; ``refit`` is implied.
    :param reference: Full-data fit that replications are aligned to.
    :param progress: Show a tqdm progress bar.
    """
    if reference.p_mat.rows != x.rows or reference.a_mat.rows != x.cols:
        raise ValueError(
            f"Reference fit of shapes {reference.p_mat.shape}/{reference.a_mat.shape} was not fitted on x {x.shape}"
        )
    if not cfg_boot.refit:
        log.warning("Coefficient intervals always refit; ignoring refit=False")

    patterns = np.empty((cfg_boot.b, x.rows, reference.k))
    retries = 0
    for b in tqdm(range(cfg_boot.b), desc="Bootstrap intervals", disable=not progress):
        replicate, _, _, failed = draw_replicate(x, cfg_fit, cfg_boot, reference, BOOTSTRAP_STREAM, b)
        patterns[b] = replicate.p_mat.data
        retries += failed

    alpha = cfg_boot.alpha
    lower, upper = np.quantile(patterns, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    if retries:
        log.warning(f"{retries} replication fits were redrawn")

    features = reference.feature_names or tuple(f"feature_{i + 1}" for i in range(x.rows))
    return CoefficientCI(
        boot_mean=patterns.mean(axis=0),
        lower=lower,
        upper=upper,
        feature_names=tuple(features),
        labels=reference.labels,
        level=cfg_boot.level,
        b=cfg_boot.b,
        retries=retries,
    )


def median_width(ci: CoefficientCI, patterns: Optional[Sequence[int]] = None) -> float:
    width = ci.width if patterns is None else ci.width[:, list(patterns)]
    return float(np.median(width))
