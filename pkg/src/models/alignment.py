from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.models.nmf import FactorPair


@dataclass(frozen=True)
class Alignment:
    """``perm[i]`` is the column of the other fit matched to reference pattern ``i``."""

    perm: tuple[int, ...]
    similarity: tuple[float, ...]

    def __post_init__(self):
        perm = tuple(int(j) for j in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"{list(perm)} is not a permutation")
        if len(self.similarity) != len(perm):
            raise ValueError("One similarity per matched pattern is required")
        similarity = tuple(float(np.clip(s, 0.0, 1.0)) for s in self.similarity)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "similarity", similarity)

    @property
    def total_similarity(self) -> float:
        return float(sum(self.similarity))

    def inverse(self) -> tuple[int, ...]:
        inverse = [0] * len(self.perm)
        for i, j in enumerate(self.perm):
            inverse[j] = i
        return tuple(inverse)


def cosine_similarity_matrix(reference: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the columns of two matrices; zero columns score 0."""
    ref_norm = np.linalg.norm(reference, axis=0)
    other_norm = np.linalg.norm(other, axis=0)
    denom = np.outer(ref_norm, other_norm)
    dots = reference.T @ other
    with np.errstate(invalid="ignore", divide="ignore"):
        similarity = np.where(denom > 0, dots / denom, 0.0)
    return np.clip(similarity, 0.0, 1.0)


def align(reference: FactorPair, other: FactorPair) -> Alignment:
    """Match the patterns of ``other`` to those of ``reference``.

    Maximizes the summed cosine similarity of matched P-columns by optimal assignment. Zero columns take no
    part in the assignment and are paired last, lowest index first.
    """
    if reference.k != other.k:
        raise ValueError(f"Cannot align fits with k={reference.k} and k={other.k}")
    if reference.p_mat.rows != other.p_mat.rows:
        raise ValueError(
            f"Cannot align fits over {reference.p_mat.rows} and {other.p_mat.rows} features"
        )

    ref_p = reference.p_mat.data
    other_p = other.p_mat.data
    similarity = cosine_similarity_matrix(ref_p, other_p)

    ref_live = np.flatnonzero(np.linalg.norm(ref_p, axis=0) > 0)
    other_live = np.flatnonzero(np.linalg.norm(other_p, axis=0) > 0)

    perm = np.full(reference.k, -1, dtype=np.intp)
    if ref_live.size and other_live.size:
        rows, cols = linear_sum_assignment(similarity[np.ix_(ref_live, other_live)], maximize=True)
        perm[ref_live[rows]] = other_live[cols]

    unmatched_ref = np.flatnonzero(perm < 0)
    unmatched_other = np.setdiff1d(np.arange(other.k), perm[perm >= 0])
    perm[unmatched_ref] = unmatched_other

    return Alignment(
        perm=tuple(perm.tolist()),
        similarity=tuple(similarity[i, perm[i]] for i in range(reference.k)),
    )
