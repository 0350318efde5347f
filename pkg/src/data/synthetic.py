"""Ground-truth synthetic learner-feature data.

Builds sparse non-negative patterns ``P*`` (a few high-loading defining features per pattern over a low
background) and affinities ``A*`` with a mass of exact zeros, and emits ``X = P* A*^T`` plus optional
noise clamped at zero.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.data.io import GroupLabeling
from src.data.schema import FeatureSchema
from src.models.matrix import Matrix
from src.models.nmf import default_pattern_labels
from src.utils.seeding import SYNTHETIC_STREAM, get_rng

DEFINING_LOADING = (0.5, 1.0)
BACKGROUND_LOADING = (0.0, 0.1)


@dataclass(frozen=True)
class GroupShift:
    """Plant a group effect: a ``fraction`` of learners, tagged "f", get ``delta`` added on ``pattern``.

    ``pattern`` is 1-based, matching the ``pattern_<k>`` labels.
    """

    pattern: int = 1
    delta: float = 0.4
    fraction: float = 0.5


@dataclass(frozen=True)
class SynthConfig:
    p: int = 21
    n: int = 120
    k: int = 4
    defining_per_pattern: int = 3
    zero_affinity_prob: float = 0.2
    noise_sd: float = 0.0
    seed: int = 0
    group_shift: Optional[GroupShift] = None

    def __post_init__(self):
        if isinstance(self.group_shift, Mapping):
            object.__setattr__(self, "group_shift", GroupShift(**self.group_shift))
        if min(self.p, self.n, self.k) < 1:
            raise ValueError(f"p, n and k must be positive, got p={self.p}, n={self.n}, k={self.k}")
        if not 0 <= self.defining_per_pattern <= self.p:
            raise ValueError(f"defining_per_pattern must lie in [0, p={self.p}], got {self.defining_per_pattern}")
        if not 0.0 <= self.zero_affinity_prob <= 1.0:
            raise ValueError(f"zero_affinity_prob must lie in [0, 1], got {self.zero_affinity_prob}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be non-negative, got {self.noise_sd}")
        if self.seed < 0:
            raise ValueError(f"seed must be an unsigned integer, got {self.seed}")
        shift = self.group_shift
        if shift is not None:
            if shift.delta < 0:
                raise ValueError(f"group_shift.delta must be non-negative, got {shift.delta}")
            if not 1 <= shift.pattern <= self.k:
                raise ValueError(f"group_shift.pattern must lie in [1, k={self.k}], got {shift.pattern}")
            n_shifted = round(shift.fraction * self.n)
            if not 1 <= n_shifted <= self.n - 1:
                raise ValueError(
                    f"group_shift.fraction={shift.fraction} leaves a group empty for n={self.n} learners"
                )


@dataclass(frozen=True)
class SyntheticData:
    x: Matrix
    p_true: Matrix
    a_true: Matrix
    groups: Optional[GroupLabeling] = None


def feature_names(p: int) -> tuple[str, ...]:
    """Built-in learning-style feature names when ``p`` matches them, generic names otherwise."""
    schema = FeatureSchema.builtin()
    if p == len(schema):
        return schema.names
    return tuple(f"feature_{i + 1}" for i in range(p))


def learner_ids(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n)))
    return tuple(f"L{j + 1:0{width}d}" for j in range(n))


def generate(cfg: SynthConfig) -> SyntheticData:
    """Draw ``(X, P*, A*, groups)`` deterministically from ``cfg.seed``."""
    rng = get_rng(cfg.seed, SYNTHETIC_STREAM)

    p_true = rng.uniform(*BACKGROUND_LOADING, size=(cfg.p, cfg.k))
    for k in range(cfg.k):
        defining = rng.choice(cfg.p, size=cfg.defining_per_pattern, replace=False)
        # uniform on (0.5, 1]
        low, high = DEFINING_LOADING
        p_true[defining, k] = high - (high - low) * rng.random(cfg.defining_per_pattern)

    zero = rng.random((cfg.n, cfg.k)) < cfg.zero_affinity_prob
    a_true = np.where(zero, 0.0, 1.0 - rng.random((cfg.n, cfg.k)))

    groups = None
    ids = learner_ids(cfg.n)
    if cfg.group_shift is not None:
        shift = cfg.group_shift
        shifted = np.zeros(cfg.n, dtype=bool)
        shifted[rng.choice(cfg.n, size=round(shift.fraction * cfg.n), replace=False)] = True
        a_true[shifted, shift.pattern - 1] += shift.delta
        groups = GroupLabeling({lid: "f" if s else "p" for lid, s in zip(ids, shifted)}, ("f", "p"))

    x = p_true @ a_true.T
    if cfg.noise_sd > 0:
        x = np.maximum(x + rng.normal(0.0, cfg.noise_sd, size=x.shape), 0.0)

    names = feature_names(cfg.p)
    labels = default_pattern_labels(cfg.k)
    return SyntheticData(
        x=Matrix(x, names, ids),
        p_true=Matrix(p_true, names, labels),
        a_true=Matrix(a_true, ids, labels),
        groups=groups,
    )
