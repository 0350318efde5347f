from pathlib import Path

import numpy as np
import pytest
from hydra import compose, initialize
from hydra.core.global_hydra import GlobalHydra
from omegaconf import DictConfig

from src.data.synthetic import SynthConfig, SyntheticData, generate
from src.models.nmf import FitConfig

FAST_FIT = FitConfig(k=3, seed=0, tol=1e-7, max_iter=300, restarts=2, residual_tol=1e-2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic() -> SyntheticData:
    """Noiseless data with 3 planted patterns over 12 features and 40 learners."""
    return generate(SynthConfig(p=12, n=40, k=3, defining_per_pattern=3, seed=1))


@pytest.fixture(scope="session")
def fast_fit() -> FitConfig:
    return FAST_FIT


@pytest.fixture
def compose_cli(tmp_path: Path):
    """Compose the CLI config with overrides, writing into a fresh output directory."""

    def _compose(overrides: list[str], out_dir: Path = tmp_path / "out") -> DictConfig:
        GlobalHydra.instance().clear()
        with initialize(version_base="1.3", config_path="../configs"):
            cfg = compose(
                config_name="cli.yaml",
                overrides=[f"out_dir={out_dir}", "extras.print_config=False", "quiet=True", *overrides],
            )
        return cfg

    yield _compose

    GlobalHydra.instance().clear()
