"""Lawson-Hanson active-set solver for ``min ||Cx - d||^2`` subject to ``x >= 0``.

The unconstrained subproblems are solved by QR of the passive columns. The passive set always stays linearly
independent: a column whose QR pivot falls below ``RANK_TOL`` times the largest pivot is refused for the
current step.

:func:`nnls_multi` runs the same iteration on many right-hand sides at once through the normal equations and
hands the columns it cannot settle to :func:`nnls`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from src.models.matrix import Matrix

RANK_TOL = 1e-12
DEFAULT_KKT_TOL = 1e-10
GRAM_RANK_TOL = 1e-7
MAX_PASSES_PER_VARIABLE = 6

ArrayLike = Union[Matrix, np.ndarray]


@dataclass(frozen=True)
class NnlsSolution:
    x: np.ndarray
    residual_sq: float
    iterations: int
    active_set: frozenset[int]

    def gradient(self, c: ArrayLike, d) -> np.ndarray:
        """Gradient ``C^T (Cx - d)`` at ``x``."""
        c = _values(c)
        return c.T @ (c @ self.x - np.asarray(d, dtype=np.float64))

    def kkt_violation(self, c: ArrayLike, d) -> float:
        """Largest violation of the KKT conditions; zero when ``x`` is optimal.

        Zero coordinates need a non-negative gradient, positive coordinates a vanishing one.
        """
        g = self.gradient(c, d)
        positive = self.x > 0
        dual = np.maximum(-g[~positive], 0.0)
        stationary = np.abs(g[positive])
        return float(max(dual.max(initial=0.0), stationary.max(initial=0.0)))


class NnlsConvergenceError(RuntimeError):
    """Raised when the active-set iteration cap is exceeded; carries the best (feasible) iterate."""

    def __init__(self, message: str, solution: NnlsSolution, column: Optional[int] = None):
        super().__init__(message)
        self.solution = solution
        self.column = column


def _values(m: ArrayLike) -> np.ndarray:
    return m.data if isinstance(m, Matrix) else np.asarray(m, dtype=np.float64)


def _solve_passive(c: np.ndarray, d: np.ndarray, columns: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least squares restricted to ``columns``, taken in the given order.

    A column whose QR pivot is below ``RANK_TOL`` times the largest pivot lies (numerically) in the span of
    the columns before it and is excluded.

    :return: The kept columns, their least-squares coefficients and the excluded columns.
    """
    if columns.size == 0:
        return columns, np.zeros(0), columns

    q, r = scipy.linalg.qr(c[:, columns], mode="economic")
    pivots = np.zeros(columns.size)
    rank = min(r.shape)
    pivots[:rank] = np.abs(np.diag(r))[:rank]
    keep = pivots > RANK_TOL * pivots.max()

    if keep.all():
        dependent = columns[:0]
    else:
        dependent = columns[~keep]
        columns = columns[keep]
        if columns.size == 0:
            return columns, np.zeros(0), dependent
        q, r = scipy.linalg.qr(c[:, columns], mode="economic")

    z = scipy.linalg.solve_triangular(r, q.T @ d)
    return columns, z, dependent


def _solution(c: np.ndarray, d: np.ndarray, x: np.ndarray, iterations: int) -> NnlsSolution:
    x = np.maximum(x, 0.0)
    residual = c @ x - d
    return NnlsSolution(
        x=x,
        residual_sq=float(residual @ residual),
        iterations=iterations,
        active_set=frozenset(int(i) for i in np.flatnonzero(x == 0)),
    )


def nnls(
    c: ArrayLike,
    d,
    kkt_tol: float = DEFAULT_KKT_TOL,
    max_iter: Optional[int] = None,
) -> NnlsSolution:
    """Solve ``argmin_x ||Cx - d||^2`` for ``x >= 0``.

    :param c: Design matrix of shape ``(m, n)`` with ``n >= 1``.
    :param d: Right-hand side of length ``m``.
    :param kkt_tol: Relative KKT tolerance; the absolute threshold is ``kkt_tol * (1 + ||C^T d||_inf)``.
    :param max_iter: Cap on active-set iterations. Default is ``3 * n``.
    :return: The solution with its squared residual and final active set.
    """
    c = np.asarray_chkfinite(_values(c), dtype=np.float64)
    d = np.asarray_chkfinite(d, dtype=np.float64)

    if c.ndim != 2:
        raise ValueError(f"Expected a two-dimensional design matrix, got shape {c.shape}")
    if d.ndim != 1:
        raise ValueError(f"Expected a one-dimensional right-hand side, got shape {d.shape}")
    m, n = c.shape
    if n == 0:
        raise ValueError("Design matrix must have at least one column")
    if m != d.shape[0]:
        raise ValueError(f"Incompatible dimensions: design has {m} rows, right-hand side has {d.shape[0]}")

    if max_iter is None:
        max_iter = 3 * n
    eps = kkt_tol * (1.0 + float(np.max(np.abs(c.T @ d), initial=0.0)))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # columns refused for the current iterate: dependent, or non-positive on entry
    blocked = np.zeros(n, dtype=bool)
    iterations = 0

    while True:
        w = c.T @ (d - c @ x)
        candidates = ~passive & ~blocked & (w > eps)
        if not candidates.any():
            break

        iterations += 1
        if iterations > max_iter:
            raise NnlsConvergenceError(
                f"NNLS exceeded {max_iter} iterations (numerically degenerate problem?)",
                _solution(c, d, x, iterations - 1),
            )

        # np.argmax picks the lowest index among ties
        entering = int(np.argmax(np.where(candidates, w, -np.inf)))
        columns = np.append(np.flatnonzero(passive), entering)
        kept, z_kept, dependent = _solve_passive(c, d, columns)

        z = np.zeros(n)
        z[kept] = z_kept
        if entering in dependent or z[entering] <= 0:
            blocked[entering] = True
            continue

        passive[entering] = True
        if dependent.size:
            passive[dependent] = False
            x[dependent] = 0.0

        while not (z[passive] > 0).all():
            infeasible = np.flatnonzero(passive & (z <= 0))
            ratios = x[infeasible] / (x[infeasible] - z[infeasible])
            step = int(np.argmin(ratios))
            x = x + ratios[step] * (z - x)
            x[infeasible[step]] = 0.0

            leaving = passive & (x <= 0)
            passive[leaving] = False
            x[leaving] = 0.0

            kept, z_kept, dependent = _solve_passive(c, d, np.flatnonzero(passive))
            passive[dependent] = False
            z = np.zeros(n)
            z[kept] = z_kept

        x = z
        blocked[:] = False

    return _solution(c, d, x, iterations)


def _grouped_solve(gram: np.ndarray, rhs: np.ndarray, passive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``gram[S, S] z_S = rhs[S]`` for every column, with ``S`` that column's passive set.

    Columns sharing a passive set share one Cholesky factorization. A block whose Cholesky diagonal falls
    below ``GRAM_RANK_TOL`` times its largest entry is numerically singular; its columns are flagged instead
    of solved.

    :return: The solutions (zero outside the passive sets) and the mask of singular columns.
    """
    z = np.zeros(passive.shape)
    singular = np.zeros(passive.shape[1], dtype=bool)
    if passive.shape[1] == 0:
        return z, singular

    supports, group = np.unique(passive.T, axis=0, return_inverse=True)
    group = group.reshape(-1)
    for g, support in enumerate(supports):
        cols = np.flatnonzero(group == g)
        rows = np.flatnonzero(support)
        if rows.size == 0:
            continue
        try:
            factor = scipy.linalg.cho_factor(gram[np.ix_(rows, rows)], check_finite=False)
        except np.linalg.LinAlgError:
            singular[cols] = True
            continue
        diag = np.abs(np.diag(factor[0]))
        if diag.min() <= GRAM_RANK_TOL * diag.max():
            singular[cols] = True
            continue
        z[np.ix_(rows, cols)] = scipy.linalg.cho_solve(factor, rhs[np.ix_(rows, cols)], check_finite=False)
    return z, singular


def _batched_solve(gram: np.ndarray, rhs: np.ndarray, passive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same contract as :func:`_grouped_solve`, with all columns in one stacked factorization.

    Column ``j`` gets the system ``gram`` restricted to its passive set, padded with the identity. When some
    block is not positive definite the stacked Cholesky fails as a whole and the columns are grouped instead.
    """
    n, m = passive.shape
    mask = passive.T
    systems = np.where(mask[:, :, None] & mask[:, None, :], gram, 0.0)
    diagonal = np.arange(n)
    systems[:, diagonal, diagonal] += ~mask
    try:
        factor = np.linalg.cholesky(systems)
    except np.linalg.LinAlgError:
        return _grouped_solve(gram, rhs, passive)

    pivots = np.abs(np.diagonal(factor, axis1=1, axis2=2))
    smallest = np.where(mask, pivots, np.inf).min(axis=1, initial=np.inf)
    largest = np.where(mask, pivots, 0.0).max(axis=1, initial=0.0)
    singular = smallest <= GRAM_RANK_TOL * largest
    systems[singular] = np.eye(n)

    z = np.linalg.solve(systems, np.where(mask, rhs.T, 0.0)[:, :, None])[:, :, 0].T
    z[:, singular] = 0.0
    return np.where(passive, z, 0.0), singular


def _check_multi(c_values: np.ndarray, d_values: np.ndarray) -> None:
    if c_values.ndim != 2 or d_values.ndim != 2:
        raise ValueError(
            f"Expected a two-dimensional design and right-hand sides, got shapes {c_values.shape}, {d_values.shape}"
        )
    if c_values.shape[1] == 0:
        raise ValueError("Design matrix must have at least one column")
    if c_values.shape[0] != d_values.shape[0]:
        raise ValueError(
            f"Incompatible dimensions: design has shape {c_values.shape}, right-hand sides {d_values.shape}"
        )
    if not np.isfinite(c_values).all():
        raise ValueError("array must not contain infs or NaNs")
    bad = np.flatnonzero(~np.isfinite(d_values).all(axis=0))
    if bad.size:
        raise ValueError(f"Column {bad[0]}: array must not contain infs or NaNs")


def nnls_multi(
    c: ArrayLike,
    d: ArrayLike,
    kkt_tol: float = DEFAULT_KKT_TOL,
    init: Optional[np.ndarray] = None,
) -> Matrix:
    """Column-wise NNLS: column ``j`` of the result solves ``min ||Cx - d_j||^2`` for ``x >= 0``.

    All columns run the Lawson-Hanson iteration together on the shared ``C^T C`` and ``C^T D``. Each pass
    solves every column's passive system in one stacked Cholesky factorization, or per group of columns
    sharing a passive set when some block is not positive definite. ``init`` warm-starts column ``j``
    from the support of ``init[:, j]``.

    Every column leaves with its KKT violation below ``kkt_tol * (1 + ||C^T d_j||_inf)``. Columns that hit a
    singular passive block, run out of passes or miss that bound are re-solved by :func:`nnls`, so the result
    agrees with the per-column solver within that tolerance. Columns are independent problems and the result
    does not depend on the order they are solved in.
    """
    c_values = _values(c)
    d_values = _values(d)
    _check_multi(c_values, d_values)
    n, m = c_values.shape[1], d_values.shape[1]

    gram = c_values.T @ c_values
    ctd = c_values.T @ d_values
    eps = kkt_tol * (1.0 + np.abs(ctd).max(axis=0, initial=0.0))

    # a zero column of C can never hold a positive coefficient
    usable = (np.diag(gram) > 0)[:, None]
    if init is None:
        x = np.zeros((n, m))
    else:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (n, m):
            raise ValueError(f"Warm start must have shape {(n, m)}, got {init.shape}")
        x = np.where(usable & (init > 0), init, 0.0)
    passive = x > 0

    # per column: still iterating, about to add a variable, handed to the scalar solver
    running = np.ones(m, dtype=bool)
    entering_next = ~passive.any(axis=0)
    fallback = np.zeros(m, dtype=bool)
    warm = passive.any(axis=0)

    for _ in range(MAX_PASSES_PER_VARIABLE * n + 1):
        cols = np.flatnonzero(running & entering_next)
        if cols.size:
            w = ctd[:, cols] - gram @ x[:, cols]
            w[passive[:, cols] | ~usable] = -np.inf
            entering = np.argmax(w, axis=0)
            optimal = w[entering, np.arange(cols.size)] <= eps[cols]
            running[cols[optimal]] = False
            grow = ~optimal
            passive[entering[grow], cols[grow]] = True
            entering_next[cols[grow]] = False

        cols = np.flatnonzero(running)
        if not cols.size:
            break
        z, singular = _batched_solve(gram, ctd[:, cols], passive[:, cols])

        if singular.any():
            # a warm start gets one cold restart before the scalar solver takes over
            retry = cols[singular & warm[cols]]
            give_up = cols[singular & ~warm[cols]]
            x[:, retry] = 0.0
            passive[:, retry] = False
            entering_next[retry] = True
            warm[retry] = False
            fallback[give_up] = True
            running[give_up] = False
            cols, z = cols[~singular], z[:, ~singular]

        feasible = ~((z <= 0) & passive[:, cols]).any(axis=0)
        done = cols[feasible]
        x[:, done] = z[:, feasible]
        entering_next[done] = True

        stepping = cols[~feasible]
        if stepping.size:
            xs, zs, ps = x[:, stepping], z[:, ~feasible], passive[:, stepping]
            blocking = ps & (zs <= 0)
            delta = xs - zs
            ratio = np.where(blocking, xs / np.where(delta > 0, delta, 1.0), np.inf)
            leaving = np.argmin(ratio, axis=0)
            alpha = ratio[leaving, np.arange(stepping.size)]
            xs = xs + alpha * (zs - xs)
            xs[leaving, np.arange(stepping.size)] = 0.0
            ps &= xs > 0
            x[:, stepping] = np.where(ps, xs, 0.0)
            passive[:, stepping] = ps
    fallback |= running

    g = gram @ x - ctd
    violation = np.where(x > 0, np.abs(g), np.maximum(-g, 0.0)).max(axis=0, initial=0.0)
    fallback |= violation > eps

    for j in np.flatnonzero(fallback):
        try:
            x[:, j] = nnls(c_values, d_values[:, j], kkt_tol=kkt_tol).x
        except NnlsConvergenceError as ex:
            raise NnlsConvergenceError(f"Column {j}: {ex}", ex.solution, column=int(j)) from ex

    row_names = c.col_names if isinstance(c, Matrix) else None
    col_names = d.col_names if isinstance(d, Matrix) else None
    return Matrix(np.maximum(x, 0.0), row_names, col_names)
