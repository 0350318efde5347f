from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np


def _as_names(names: Optional[Sequence[str]], expected: int, axis: str) -> Optional[tuple[str, ...]]:
    if names is None:
        return None
    names = tuple(str(name) for name in names)
    if len(names) != expected:
        raise ValueError(f"Expected {expected} {axis} names, got {len(names)}")
    return names


@dataclass(frozen=True, eq=False)
class Matrix:
    """Dense, immutable, row-major float64 matrix with optional row/column names.

    Names are carried through operations where unambiguous and never affect numerics.
    """

    data: np.ndarray
    row_names: Optional[tuple[str, ...]] = None
    col_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2:
            raise ValueError(f"Matrix data must be two-dimensional, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "row_names", _as_names(self.row_names, data.shape[0], "row"))
        object.__setattr__(self, "col_names", _as_names(self.col_names, data.shape[1], "column"))

    @classmethod
    def from_array(
        cls,
        data,
        row_names: Optional[Sequence[str]] = None,
        col_names: Optional[Sequence[str]] = None,
    ) -> Matrix:
        return cls(np.asarray(data, dtype=np.float64), row_names, col_names)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> Matrix:
        return cls(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, size: int) -> Matrix:
        return cls(np.eye(size))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def to_array(self) -> np.ndarray:
        """Writable copy of the underlying values."""
        return self.data.copy()

    def column(self, j: int) -> np.ndarray:
        return self.data[:, j].copy()

    def select_columns(self, indices: Sequence[int]) -> Matrix:
        indices = np.asarray(indices, dtype=np.intp)
        col_names = None if self.col_names is None else [self.col_names[j] for j in indices]
        return Matrix(self.data[:, indices], self.row_names, col_names)

    def with_names(
        self,
        row_names: Optional[Sequence[str]] = None,
        col_names: Optional[Sequence[str]] = None,
    ) -> Matrix:
        return Matrix(
            self.data,
            self.row_names if row_names is None else row_names,
            self.col_names if col_names is None else col_names,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
            and self.row_names == other.row_names
            and self.col_names == other.col_names
        )

    __hash__ = None

    def __matmul__(self, other: Matrix) -> Matrix:
        return multiply(self, other)

    def __sub__(self, other: Matrix) -> Matrix:
        return subtract(self, other)


def multiply(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product; the result keeps ``a``'s row names and ``b``'s column names."""
    if a.cols != b.rows:
        raise ValueError(f"Cannot multiply matrices of shapes {a.shape} and {b.shape}")
    return Matrix(a.data @ b.data, a.row_names, b.col_names)


def transpose(m: Matrix) -> Matrix:
    return Matrix(m.data.T, m.col_names, m.row_names)


def subtract(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ValueError(f"Cannot subtract matrices of shapes {a.shape} and {b.shape}")
    return Matrix(a.data - b.data, a.row_names, a.col_names)


def frobenius_sq(m) -> float:
    """Squared Frobenius norm, i.e. the sum of squared entries."""
    values = m.data if isinstance(m, Matrix) else np.asarray(m, dtype=np.float64)
    return float(np.sum(np.square(values)))
