"""Non-negative matrix factorization ``X ~ P A^T`` by alternating non-negative least squares.

``X`` is ``p x n`` (features x learners), ``P`` is ``p x K`` (learning patterns) and ``A`` is ``n x K``
(individual affinities). Each alternating step solves its NNLS subproblem exactly, so the objective
``||X - P A^T||_F^2`` never increases.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

import numpy as np

from src.models.matrix import Matrix, frobenius_sq
from src.models.nnls import DEFAULT_KKT_TOL, nnls_multi
from src.utils import pylogger
from src.utils.seeding import RESTART_STREAM, get_rng

log = pylogger.CommandLogger(__name__)


class RescaleMode(str, Enum):
    MAX = "max"
    MEAN = "mean"
    NONE = "none"


@dataclass(frozen=True)
class FitConfig:
    k: int = 8
    seed: int = 0
    tol: float = 1e-6
    max_iter: int = 500
    restarts: int = 10
    rescale_mode: RescaleMode = RescaleMode.MAX
    kkt_tol: float = DEFAULT_KKT_TOL
    residual_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "rescale_mode", RescaleMode(self.rescale_mode))
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.seed < 0:
            raise ValueError(f"seed must be an unsigned integer, got {self.seed}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if not self.residual_tol >= 0:
            raise ValueError(f"residual_tol must be non-negative, got {self.residual_tol}")


def default_pattern_labels(k: int) -> tuple[str, ...]:
    return tuple(f"pattern_{i + 1}" for i in range(k))


@dataclass(frozen=True)
class FactorPair:
    """A fitted ``(P, A)`` pair with fit diagnostics.

    Column names of ``p_mat`` and ``a_mat`` are the pattern labels, row names are the feature names and
    learner ids respectively.
    """

    p_mat: Matrix
    a_mat: Matrix
    k: int
    objective: float
    objective_trace: tuple[float, ...] = ()
    seed: int = 0
    restarts_used: int = 1
    converged: bool = True
    n_iter: int = 0
    config: Optional[FitConfig] = None
    dead_patterns: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.p_mat.cols != self.k or self.a_mat.cols != self.k:
            raise ValueError(
                f"Factor shapes {self.p_mat.shape} and {self.a_mat.shape} do not both have k={self.k} columns"
            )
        for name, mat in (("patterns", self.p_mat), ("affinities", self.a_mat)):
            if not np.isfinite(mat.data).all():
                raise ValueError(f"Non-finite entries in {name}")
            if (mat.data < 0).any():
                i, j = np.argwhere(mat.data < 0)[0]
                raise ValueError(f"Negative entry in {name} at row {i}, column {j}: {mat.data[i, j]}")
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        object.__setattr__(self, "dead_patterns", tuple(int(k) for k in self.dead_patterns))

    @classmethod
    def from_arrays(
        cls,
        p_values,
        a_values,
        feature_names: Optional[Sequence[str]] = None,
        learner_ids: Optional[Sequence[str]] = None,
        labels: Optional[Sequence[str]] = None,
        x: Optional[Matrix] = None,
        **diagnostics,
    ) -> FactorPair:
        """Wrap raw arrays; the objective is recomputed against ``x`` when given."""
        p_values = np.asarray(p_values, dtype=np.float64)
        a_values = np.asarray(a_values, dtype=np.float64)
        k = p_values.shape[1]
        labels = default_pattern_labels(k) if labels is None else tuple(labels)
        p_mat = Matrix(p_values, feature_names, labels)
        a_mat = Matrix(a_values, learner_ids, labels)
        if x is not None:
            diagnostics["objective"] = frobenius_sq(x.data - p_values @ a_values.T)
        diagnostics.setdefault("objective", 0.0)
        diagnostics.setdefault("dead_patterns", _dead_patterns(a_values))
        return cls(p_mat=p_mat, a_mat=a_mat, k=k, **diagnostics)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.p_mat.col_names or default_pattern_labels(self.k)

    @property
    def feature_names(self) -> Optional[tuple[str, ...]]:
        return self.p_mat.row_names

    @property
    def learner_ids(self) -> Optional[tuple[str, ...]]:
        return self.a_mat.row_names

    def approximation(self) -> np.ndarray:
        return self.p_mat.data @ self.a_mat.data.T

    def residual_sq(self, x: Matrix) -> float:
        return frobenius_sq(x.data - self.approximation())

    def relative_residual(self, x: Matrix) -> float:
        """``||X - P A^T||_F / ||X||_F`` (the absolute residual when ``X`` is zero)."""
        norm = np.sqrt(frobenius_sq(x))
        residual = np.sqrt(self.residual_sq(x))
        return float(residual / norm) if norm > 0 else float(residual)

    def with_labels(self, labels: Sequence[str]) -> FactorPair:
        labels = tuple(labels)
        if len(labels) != self.k:
            raise ValueError(f"Expected {self.k} pattern labels, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise ValueError(f"Pattern labels must be unique, got {labels}")
        return replace(
            self,
            p_mat=self.p_mat.with_names(col_names=labels),
            a_mat=self.a_mat.with_names(col_names=labels),
        )


def _dead_patterns(a_values: np.ndarray) -> tuple[int, ...]:
    return tuple(int(k) for k in np.flatnonzero(~(a_values > 0).any(axis=0)))


def _check_input(x: Matrix, k: int) -> np.ndarray:
    values = x.data
    if not np.isfinite(values).all():
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"Non-finite entry in data matrix at row {i}, column {j}")
    if (values < 0).any():
        i, j = np.argwhere(values < 0)[0]
        raise ValueError(f"Negative entry in data matrix at row {i}, column {j}: {values[i, j]}")
    bound = min(x.rows, x.cols)
    if k > bound:
        raise ValueError(f"k={k} exceeds min(features, learners) = min{x.shape} = {bound}")
    return values


@dataclass
class _Run:
    p: np.ndarray
    a: np.ndarray
    trace: list[float]
    converged: bool


def _alternate(x: np.ndarray, p: np.ndarray, cfg: FitConfig) -> _Run:
    """One alternating run from the initial patterns ``p``."""
    trace: list[float] = []
    converged = False
    a = np.zeros((x.shape[1], p.shape[1]))
    # an exactly factorizable X only approaches zero residual geometrically
    floor = max(np.finfo(np.float64).eps, cfg.residual_tol) ** 2 * frobenius_sq(x)

    for _ in range(cfg.max_iter):
        # A^T <- NNLS(P, X), then P^T <- NNLS(A, X^T), each warm-started from the previous iterate
        a = nnls_multi(p, x, kkt_tol=cfg.kkt_tol, init=a.T).data.T
        p = nnls_multi(a, x.T, kkt_tol=cfg.kkt_tol, init=p.T).data.T

        objective = frobenius_sq(x - p @ a.T)
        trace.append(objective)
        if objective <= floor:
            converged = True
            break
        if len(trace) > 1 and (trace[-2] - objective) / max(trace[-2], 1e-30) < cfg.tol:
            converged = True
            break

    return _Run(p=p, a=a, trace=trace, converged=converged)


def fit(x: Matrix, cfg: FitConfig, init_p: Optional[np.ndarray] = None) -> FactorPair:
    """Fit ``X ~ P A^T``, keeping the best objective over ``cfg.restarts`` independent runs.

    A run stops when the relative objective change drops below ``cfg.tol`` or the relative residual
    ``||X - P A^T||_F / ||X||_F`` reaches ``cfg.residual_tol``; either counts as converged.

    Restart ``r`` initializes ``P`` uniformly on ``(0, 1]`` from the stream ``(cfg.seed, r)``; when
    ``init_p`` is given, the first restart starts from it instead. Ties on the objective keep the lowest
    restart index. The result is rescaled according to ``cfg.rescale_mode``.

    :param x: Non-negative ``p x n`` data matrix.
    :param cfg: Fit configuration.
    :param init_p: Optional ``p x K`` starting patterns (warm start).
    :return: The best fitted factor pair.
    """
    values = _check_input(x, cfg.k)
    shape = (x.rows, cfg.k)
    if init_p is not None:
        init_p = np.asarray(init_p, dtype=np.float64)
        if init_p.shape != shape:
            raise ValueError(f"Initial patterns must have shape {shape}, got {init_p.shape}")

    best: Optional[_Run] = None
    for restart in range(cfg.restarts):
        if restart == 0 and init_p is not None:
            p0 = init_p.copy()
        else:
            p0 = 1.0 - get_rng(cfg.seed, RESTART_STREAM, restart).random(shape)
        run = _alternate(values, p0, cfg)
        log.debug(f"Restart {restart}: objective={run.trace[-1]:.6g} after {len(run.trace)} iterations")
        if best is None or run.trace[-1] < best.trace[-1]:
            best = run

    if not best.converged:
        log.warning(f"Best restart did not converge within max_iter={cfg.max_iter} iterations")

    fp = FactorPair.from_arrays(
        best.p,
        best.a,
        feature_names=x.row_names,
        learner_ids=x.col_names,
        objective=best.trace[-1],
        objective_trace=best.trace,
        seed=cfg.seed,
        restarts_used=cfg.restarts,
        converged=best.converged,
        n_iter=len(best.trace),
        config=cfg,
    )
    if fp.dead_patterns:
        log.warning(f"Patterns with all-zero affinities: {[fp.labels[k] for k in fp.dead_patterns]}")
    return rescale(fp, cfg.rescale_mode)


def rescale(fp: FactorPair, mode: Union[RescaleMode, str]) -> FactorPair:
    """Rescale ``(P, A)`` to ``(P S, A S^-1)`` without changing ``P A^T``.

    ``s_k`` is the maximum (``max``) or mean (``mean``) of affinity column ``k``; ``none`` is the identity.
    All-zero affinity columns keep ``s_k = 1``.
    """
    mode = RescaleMode(mode)
    if mode is RescaleMode.NONE:
        return fp

    a_values = fp.a_mat.data
    if a_values.shape[0] == 0:
        return fp
    scale = a_values.max(axis=0) if mode is RescaleMode.MAX else a_values.mean(axis=0)
    scale = np.where(scale > 0, scale, 1.0)

    return replace(
        fp,
        p_mat=Matrix(fp.p_mat.data * scale, fp.p_mat.row_names, fp.p_mat.col_names),
        a_mat=Matrix(a_values / scale, fp.a_mat.row_names, fp.a_mat.col_names),
    )


def learner_index(fp: FactorPair, learner: Union[int, str]) -> int:
    """Resolve a zero-based learner position or a learner id to a row of ``fp.a_mat``.

    Positions start at 0, so the first learner is ``0``. The ``reconstruct`` command tries the value as a
    learner id first and only then as a position.
    """
    if isinstance(learner, str):
        ids = fp.learner_ids or ()
        if learner not in ids:
            raise ValueError(f"Unknown learner id {learner!r}")
        index = ids.index(learner)
    else:
        index = int(learner)
        if not 0 <= index < fp.a_mat.rows:
            raise ValueError(f"Learner index {index} out of range [0, {fp.a_mat.rows})")
    return index


def reconstruct(fp: FactorPair, learner: Union[int, str]) -> np.ndarray:
    """Model approximation ``P A_j`` of one learner's feature column.

    :param learner: Zero-based learner position (``0`` is the first learner), or a learner id.
    """
    return fp.p_mat.data @ fp.a_mat.data[learner_index(fp, learner)]


def permute(fp: FactorPair, perm: Sequence[int], keep_labels: bool = True) -> FactorPair:
    """Reorder the patterns so that new column ``i`` is old column ``perm[i]``.

    With ``keep_labels`` the column names stay in place, i.e. the permuted patterns take over the labels of
    the positions they move to (as when aligning a refit to a reference).
    """
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(fp.k)):
        raise ValueError(f"{perm.tolist()} is not a permutation of range({fp.k})")
    labels = fp.labels if keep_labels else tuple(fp.labels[i] for i in perm)
    a_values = fp.a_mat.data[:, perm]
    return replace(
        fp,
        p_mat=Matrix(fp.p_mat.data[:, perm], fp.p_mat.row_names, labels),
        a_mat=Matrix(a_values, fp.a_mat.row_names, labels),
        dead_patterns=_dead_patterns(a_values),
    )
