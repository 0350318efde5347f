from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import yaml

from src.models.matrix import Matrix

SCHEMA_DIR = Path(__file__).parent / "schemas"
BUILTIN_SCHEMA = "learning_styles"


def load_yaml_as_dict(path: Union[str, Path]) -> dict:
    path = Path(path)
    with path.open("r") as f:
        return yaml.safe_load(f)


@dataclass(frozen=True)
class Feature:
    name: str
    description: str = ""
    styles: tuple[str, ...] = ()


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature definitions with the learning styles each feature addresses."""

    features: tuple[Feature, ...]
    name: str = "custom"

    def __post_init__(self):
        names = [feature.name for feature in self.features]
        if any(not name for name in names):
            raise ValueError("Feature names must be non-empty")
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"Duplicate feature names in schema: {duplicates}")

    @classmethod
    def from_dict(cls, definition: dict) -> FeatureSchema:
        features = tuple(
            Feature(
                name=str(entry["name"]),
                description=str(entry.get("description", "")),
                styles=tuple(str(style) for style in entry.get("styles", ())),
            )
            for entry in definition["features"]
        )
        return cls(features=features, name=str(definition.get("name", "custom")))

    @classmethod
    def load(cls, name_or_path: Union[str, Path]) -> FeatureSchema:
        """Load a built-in schema by name, or a schema YAML file by path."""
        path = SCHEMA_DIR / f"{name_or_path}.yaml"
        if not path.is_file():
            path = Path(name_or_path)
        if not path.is_file():
            raise FileNotFoundError(f"No built-in schema or schema file named {name_or_path!r}")
        return cls.from_dict(load_yaml_as_dict(path))

    @classmethod
    def builtin(cls) -> FeatureSchema:
        return cls.load(BUILTIN_SCHEMA)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(feature.name for feature in self.features)

    def __len__(self) -> int:
        return len(self.features)

    def styles_of(self, name: str) -> tuple[str, ...]:
        for feature in self.features:
            if feature.name == name:
                return feature.styles
        raise KeyError(name)

    def style_labels(self, names: Sequence[str], sep: str = ";") -> tuple[str, ...]:
        """Styles addressed by each of ``names``, joined by ``sep``; empty for names outside the schema."""
        styles = {feature.name: feature.styles for feature in self.features}
        return tuple(sep.join(styles.get(name, ())) for name in names)

    def align(self, x: Matrix) -> Matrix:
        """Validate that ``x`` carries exactly the schema features and reorder its rows to schema order."""
        if x.row_names is None:
            raise ValueError("Data matrix has no feature names to validate against the schema")
        missing = [name for name in self.names if name not in x.row_names]
        unknown = [name for name in x.row_names if name not in self.names]
        if missing or unknown:
            raise ValueError(f"Features do not match schema {self.name!r}: missing {missing}, unknown {unknown}")
        order = np.array([x.row_names.index(name) for name in self.names])
        return Matrix(x.data[order], self.names, x.col_names)
