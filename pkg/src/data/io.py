"""Reading and writing learner-feature matrices, group labels and fitted factors.

Matrices are held as ``features x learners`` internally; CSV files default to one row per learner. Numbers are
written with 17 significant digits so that doubles survive a round trip exactly.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from src.models.matrix import Matrix
from src.models.nmf import FactorPair, FitConfig
from src.utils import pylogger

log = pylogger.CommandLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
FACTORS_SCHEMA_VERSION = 1
PATTERNS_FILE = "patterns.csv"
AFFINITIES_FILE = "affinities.csv"
META_FILE = "meta.json"


class Orientation(str, Enum):
    LEARNERS_AS_ROWS = "learners_as_rows"
    FEATURES_AS_ROWS = "features_as_rows"


@dataclass(frozen=True)
class ScalingRecord:
    row_maxima: np.ndarray

    def __post_init__(self):
        maxima = np.array(self.row_maxima, dtype=np.float64)
        if not (maxima > 0).all():
            raise ValueError("All row maxima used for scaling must be positive")
        maxima.setflags(write=False)
        object.__setattr__(self, "row_maxima", maxima)

    def unscale(self, x: Matrix) -> Matrix:
        return Matrix(x.data * self.row_maxima[:, None], x.row_names, x.col_names)


@dataclass(frozen=True)
class GroupLabeling:
    """Two-group partition of learners.

    ``tags[0]`` is the group whose mean is the minuend of group differences ("f" in the canonical
    ``("f", "p")`` tagging).
    """

    labels: Mapping[str, str]
    tags: tuple[str, str] = ("f", "p")

    def __post_init__(self):
        labels = dict(self.labels)
        tags = tuple(self.tags)
        if len(tags) != 2 or tags[0] == tags[1]:
            raise ValueError(f"Exactly two distinct group tags are required, got {tags}")
        unknown = sorted(set(labels.values()) - set(tags))
        if unknown:
            raise ValueError(f"Labels use tags {unknown} outside of {tags}")
        for tag in tags:
            if tag not in labels.values():
                raise ValueError(f"Group {tag!r} is empty")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tags", tags)

    def sizes(self) -> dict[str, int]:
        return {tag: sum(1 for value in self.labels.values() if value == tag) for tag in self.tags}

    def mask(self, learner_ids: Sequence[str]) -> np.ndarray:
        """Boolean mask of the first group (``tags[0]``) over ``learner_ids``."""
        missing = [lid for lid in learner_ids if lid not in self.labels]
        if missing:
            raise ValueError(f"No group label for learners {missing}")
        return np.array([self.labels[lid] == self.tags[0] for lid in learner_ids], dtype=bool)

    def swapped(self) -> GroupLabeling:
        """The same partition with the two tags exchanged on every learner."""
        first, second = self.tags
        swap = {first: second, second: first}
        return GroupLabeling({lid: swap[tag] for lid, tag in self.labels.items()}, self.tags)


def _read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    try:
        # header read as data so that pandas does not rename duplicate column names
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as ex:
        raise ValueError(f"{path}: file is empty") from ex
    except pd.errors.ParserError as ex:
        raise ValueError(f"{path}: ragged rows ({ex})") from ex
    if not isinstance(raw.index, pd.RangeIndex):
        raise ValueError(f"{path}: ragged rows (more fields than the header)")
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(name) for name in raw.iloc[0]]
    if frame.empty:
        raise ValueError(f"{path}: header without data rows")
    if frame.shape[1] < 2:
        raise ValueError(f"{path}: expected an id column and at least one value column")
    # short rows are padded with NaN even when keep_default_na is off
    ragged = frame.isna().any(axis=1)
    if ragged.any():
        row = int(np.flatnonzero(ragged.to_numpy())[0])
        raise ValueError(f"{path}: ragged row {row + 2} (fewer fields than the header)")
    return frame


def load_matrix(path: PathLike, orientation: Union[Orientation, str] = Orientation.LEARNERS_AS_ROWS) -> Matrix:
    """Load a numeric CSV with one header row and one id column as a ``features x learners`` matrix.

    :param path: CSV path; header ``id,<name>,...``.
    :param orientation: Whether rows of the file are learners (default) or features.
    :return: The matrix with feature row names and learner column names.
    """
    orientation = Orientation(orientation)
    frame = _read_table(path)
    ids = frame.iloc[:, 0].str.strip()
    headers = [str(h).strip() for h in frame.columns[1:]]
    cells = frame.iloc[:, 1:]

    duplicated = ids[ids.duplicated()]
    if not duplicated.empty:
        raise ValueError(f"{path}: duplicate ids {sorted(set(duplicated))}")
    if len(set(headers)) != len(headers):
        raise ValueError(f"{path}: duplicate column names in header")

    values = cells.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce")).to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(
            f"{path}: non-numeric or missing value {cells.iat[i, j]!r} at row {ids.iat[i]!r}, column {headers[j]!r}"
        )
    negative = values < 0
    if negative.any():
        i, j = np.argwhere(negative)[0]
        raise ValueError(f"{path}: negative value {values[i, j]} at row {ids.iat[i]!r}, column {headers[j]!r}")

    if orientation is Orientation.LEARNERS_AS_ROWS:
        x = Matrix(values.T, headers, ids.tolist())
    else:
        x = Matrix(values, ids.tolist(), headers)

    zero_learners = [x.col_names[j] for j in np.flatnonzero(~(x.data > 0).any(axis=0))]
    if zero_learners:
        log.warning(f"Learners with all-zero features (approximated by zero affinities): {zero_learners}")
    return x


def save_matrix(x: Matrix, path: PathLike, orientation: Union[Orientation, str] = Orientation.LEARNERS_AS_ROWS) -> Path:
    orientation = Orientation(orientation)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = x.row_names or tuple(f"feature_{i + 1}" for i in range(x.rows))
    learners = x.col_names or tuple(f"learner_{j + 1}" for j in range(x.cols))
    if orientation is Orientation.LEARNERS_AS_ROWS:
        frame = pd.DataFrame(x.data.T, index=pd.Index(learners, name="id"), columns=features)
    else:
        frame = pd.DataFrame(x.data, index=pd.Index(features, name="id"), columns=learners)
    frame.to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def scale_rows(x: Matrix) -> tuple[Matrix, ScalingRecord]:
    """Divide every feature row by its maximum so that all values lie in ``[0, 1]``."""
    if (x.data < 0).any():
        raise ValueError("Row scaling requires a non-negative matrix")
    maxima = x.data.max(axis=1) if x.cols else np.zeros(x.rows)
    zero_rows = np.flatnonzero(maxima <= 0)
    if zero_rows.size:
        names = [x.row_names[i] if x.row_names else str(i) for i in zero_rows]
        raise ValueError(f"Features {names} are zero for every learner; drop them before scaling")
    return Matrix(x.data / maxima[:, None], x.row_names, x.col_names), ScalingRecord(maxima)


def save_scaling(record: ScalingRecord, feature_names: Sequence[str], path: PathLike) -> Path:
    path = Path(path)
    frame = pd.DataFrame({"feature": list(feature_names), "row_max": record.row_maxima})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def load_groups(path: PathLike, learner_ids: Sequence[str]) -> GroupLabeling:
    """Load a two-column ``id,group`` CSV covering exactly ``learner_ids``."""
    frame = _read_table(path)
    if frame.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (id, group), got {frame.shape[1]}")
    ids = frame.iloc[:, 0].str.strip().tolist()
    tags = frame.iloc[:, 1].str.strip().tolist()

    duplicated = sorted({lid for lid in ids if ids.count(lid) > 1})
    if duplicated:
        raise ValueError(f"{path}: learners labelled more than once: {duplicated}")
    empty = [lid for lid, tag in zip(ids, tags) if not tag]
    if empty:
        raise ValueError(f"{path}: missing group tag for learners {empty}")

    expected = set(learner_ids)
    missing = [lid for lid in learner_ids if lid not in set(ids)]
    if missing:
        raise ValueError(f"{path}: no group label for learners {missing}")
    unknown = [lid for lid in ids if lid not in expected]
    if unknown:
        raise ValueError(f"{path}: unknown learners {unknown}")

    distinct = sorted(set(tags))
    if len(distinct) > 2:
        raise ValueError(f"{path}: more than two groups: {distinct}")
    if len(distinct) < 2:
        raise ValueError(f"{path}: both groups must be non-empty, only found {distinct}")
    canonical = ("f", "p") if set(distinct) == {"f", "p"} else (distinct[0], distinct[1])

    groups = GroupLabeling(dict(zip(ids, tags)), canonical)
    log.info(f"Loaded groups {groups.sizes()} from {path}")
    return groups


def save_groups(groups: GroupLabeling, path: PathLike, learner_ids: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = list(learner_ids) if learner_ids is not None else list(groups.labels)
    frame = pd.DataFrame({"id": ids, "group": [groups.labels[lid] for lid in ids]})
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def save_factors(fp: FactorPair, directory: PathLike) -> Path:
    """Write ``patterns.csv``, ``affinities.csv`` and ``meta.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = list(fp.labels)

    features = fp.feature_names or tuple(f"feature_{i + 1}" for i in range(fp.p_mat.rows))
    learners = fp.learner_ids or tuple(f"learner_{j + 1}" for j in range(fp.a_mat.rows))
    patterns = pd.DataFrame(fp.p_mat.data, index=pd.Index(features, name="id"), columns=labels)
    affinities = pd.DataFrame(fp.a_mat.data, index=pd.Index(learners, name="id"), columns=labels)
    patterns.to_csv(directory / PATTERNS_FILE, float_format=FLOAT_FORMAT, lineterminator="\n")
    affinities.to_csv(directory / AFFINITIES_FILE, float_format=FLOAT_FORMAT, lineterminator="\n")

    cfg = fp.config
    meta = {
        "schema_version": FACTORS_SCHEMA_VERSION,
        "k": fp.k,
        "seed": fp.seed,
        "tol": cfg.tol if cfg else None,
        "max_iter": cfg.max_iter if cfg else None,
        "restarts": cfg.restarts if cfg else fp.restarts_used,
        "rescale_mode": cfg.rescale_mode.value if cfg else None,
        "kkt_tol": cfg.kkt_tol if cfg else None,
        "residual_tol": cfg.residual_tol if cfg else None,
        "restarts_used": fp.restarts_used,
        "n_iter": fp.n_iter,
        "objective": fp.objective,
        "objective_trace": list(fp.objective_trace),
        "converged": fp.converged,
        "dead_patterns": list(fp.dead_patterns),
        "labels": labels,
    }
    with open(directory / META_FILE, "w") as file:
        json.dump(meta, file, indent=2)
        file.write("\n")
    return directory


def _read_factor_table(path: Path, labels: Sequence[str]) -> tuple[list[str], np.ndarray]:
    frame = _read_table(path)
    names = frame.iloc[:, 0].str.strip().tolist()
    columns = [str(c).strip() for c in frame.columns[1:]]
    if columns != list(labels):
        raise ValueError(f"{path}: pattern columns {columns} do not match meta.json labels {list(labels)}")
    values = frame.iloc[:, 1:].apply(lambda column: pd.to_numeric(column, errors="coerce")).to_numpy(np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"{path}: invalid value at row {names[i]!r}, column {columns[j]!r}")
    negative = values < 0
    if negative.any():
        i, j = np.argwhere(negative)[0]
        raise ValueError(f"{path}: negative value {values[i, j]} at row {names[i]!r}, column {columns[j]!r}")
    return names, values


def load_factors(directory: PathLike) -> FactorPair:
    """Inverse of :func:`save_factors`."""
    directory = Path(directory)
    meta_path = directory / META_FILE
    if not meta_path.is_file():
        raise FileNotFoundError(f"No {META_FILE} in {directory}")
    with open(meta_path) as file:
        meta = json.load(file)

    version = meta.get("schema_version")
    if version != FACTORS_SCHEMA_VERSION:
        raise ValueError(f"{meta_path}: schema version {version} is not supported (expected {FACTORS_SCHEMA_VERSION})")

    labels = meta["labels"]
    features, p_values = _read_factor_table(directory / PATTERNS_FILE, labels)
    learners, a_values = _read_factor_table(directory / AFFINITIES_FILE, labels)

    config = None
    if meta.get("tol") is not None:
        config = FitConfig(
            k=meta["k"],
            seed=meta["seed"],
            tol=meta["tol"],
            max_iter=meta["max_iter"],
            restarts=meta["restarts"],
            rescale_mode=meta["rescale_mode"],
            kkt_tol=meta["kkt_tol"],
            residual_tol=meta.get("residual_tol", FitConfig.residual_tol),
        )

    return FactorPair.from_arrays(
        p_values,
        a_values,
        feature_names=features,
        learner_ids=learners,
        labels=labels,
        objective=meta["objective"],
        objective_trace=meta["objective_trace"],
        seed=meta["seed"],
        restarts_used=meta["restarts_used"],
        converged=meta["converged"],
        n_iter=meta["n_iter"],
        config=config,
        dead_patterns=meta["dead_patterns"],
    )
