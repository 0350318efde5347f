import json
import subprocess
import sys
import time
from pathlib import Path

import pandas as pd
import pytest
from hydra import compose, initialize
from hydra.core.global_hydra import GlobalHydra

from src.cli import run
from src.data.schema import FeatureSchema
from src.utils.utils import EXIT_INVALID_INPUT, EXIT_OK

FAST_FIT_OVERRIDES = ["nmf.k=3", "nmf.restarts=2", "nmf.max_iter=300", "nmf.tol=1e-7"]
SIMULATE = ["command=simulate", "synth.p=8", "synth.n=30", "synth.k=3", "synth.defining_per_pattern=2"]
SHIFTED = [*SIMULATE, "synth.group_shift={pattern:2,delta:1.0,fraction:0.5}"]
ROOT = Path(__file__).parents[1]


def run_cli(overrides: list[str], out_dir: Path) -> int:
    GlobalHydra.instance().clear()
    with initialize(version_base="1.3", config_path="../configs"):
        cfg = compose(
            config_name="cli.yaml",
            overrides=[f"out_dir={out_dir}", "extras.print_config=False", "quiet=True", *overrides],
        )
    GlobalHydra.instance().clear()
    return run(cfg)


@pytest.fixture(scope="module")
def fitted(tmp_path_factory) -> dict[str, Path]:
    """A simulated data set with planted groups and its fit, shared by the downstream commands."""
    root = tmp_path_factory.mktemp("cli")
    dirs = {"simulate": root / "simulate", "fit": root / "fit"}
    assert run_cli(SHIFTED, dirs["simulate"]) == EXIT_OK
    fit_overrides = ["command=fit", f"command.input={dirs['simulate'] / 'matrix.csv'}", *FAST_FIT_OVERRIDES]
    assert run_cli(fit_overrides, dirs["fit"]) == EXIT_OK
    return dirs


def manifest(out_dir: Path) -> dict:
    return json.loads((out_dir / "manifest.json").read_text())


class TestSimulate:
    def test_writes_data_and_truth(self, fitted):
        out = fitted["simulate"]
        for name in ("matrix.csv", "true_patterns.csv", "true_affinities.csv", "groups.csv"):
            assert (out / name).is_file()
        x = pd.read_csv(out / "matrix.csv")
        assert x.shape == (30, 9)
        assert set(pd.read_csv(out / "groups.csv")["group"]) == {"f", "p"}

    def test_no_groups_without_shift(self, compose_cli, tmp_path):
        assert run(compose_cli(SIMULATE)) == EXIT_OK
        assert not (tmp_path / "out" / "groups.csv").exists()


class TestFit:
    def test_artifacts(self, fitted):
        out = fitted["fit"]
        for name in ("patterns.csv", "affinities.csv", "meta.json", "matrix.csv", "scaling.csv", "patterns.svg"):
            assert (out / name).is_file()
        assert json.loads((out / "meta.json").read_text())["k"] == 3

    def test_pattern_plot_has_one_bar_per_coefficient(self, fitted):
        svg = (fitted["fit"] / "patterns.svg").read_text()
        assert svg.count('id="coef_') == 8 * 3
        assert svg.count('id="coef_pattern_2_') == 8

    def test_manifest(self, fitted):
        record = manifest(fitted["fit"])
        assert record["command"] == "fit"
        assert record["exit_code"] == EXIT_OK
        assert set(record["outputs"]) >= {"patterns.csv", "affinities.csv", "meta.json", "matrix.csv"}
        assert record["config"]["nmf"]["k"] == 3
        assert len(record["inputs"]) == 1

    def test_deterministic(self, fitted, tmp_path):
        again = tmp_path / "again"
        overrides = ["command=fit", f"command.input={fitted['simulate'] / 'matrix.csv'}", *FAST_FIT_OVERRIDES]
        assert run_cli(overrides, again) == EXIT_OK
        for name in ("patterns.csv", "affinities.csv", "patterns.svg"):
            assert (again / name).read_bytes() == (fitted["fit"] / name).read_bytes()

    def test_labels(self, fitted, compose_cli, tmp_path):
        overrides = [
            "command=fit",
            f"command.input={fitted['simulate'] / 'matrix.csv'}",
            "command.labels=[active,visual,global]",
            "command.plot=False",
            *FAST_FIT_OVERRIDES,
        ]
        assert run(compose_cli(overrides)) == EXIT_OK
        assert pd.read_csv(tmp_path / "out" / "patterns.csv").columns.tolist()[1:] == ["active", "visual", "global"]


class TestDownstream:
    def test_summary(self, fitted, tmp_path):
        groups = fitted["simulate"] / "groups.csv"
        overrides = ["command=summary", f"command.factors={fitted['fit']}", f"command.groups={groups}"]
        assert run_cli(overrides, tmp_path) == EXIT_OK
        summary = pd.read_csv(tmp_path / "summary.csv")
        assert summary.columns.tolist() == [
            "pattern", "k", "q25", "mean", "q50", "q75", "group_mean_f", "group_mean_p", "pooled_sd"
        ]
        assert (summary["q25"] <= summary["q75"]).all()

    def test_ci(self, fitted, tmp_path):
        overrides = ["command=ci", f"command.factors={fitted['fit']}", "bootstrap.b=4", "bootstrap.level=0.9"]
        assert run_cli(overrides, tmp_path) == EXIT_OK
        ci = pd.read_csv(tmp_path / "ci.csv")
        assert ci.columns.tolist() == ["feature", "styles", "pattern", "boot_mean", "lower", "upper"]
        # generic synthetic feature names carry no styles
        assert ci["styles"].isna().all()
        assert len(ci) == 8 * 3
        assert (ci["lower"] <= ci["upper"]).all()
        for k in (1, 2, 3):
            svg = (tmp_path / f"ci_pattern_{k}.svg").read_text()
            assert svg.count('id="coef_') + svg.count('id="defining_') == 8

    def test_group_test(self, fitted, tmp_path):
        overrides = [
            "command=test",
            f"command.factors={fitted['fit']}",
            f"command.groups={fitted['simulate'] / 'groups.csv'}",
            "bootstrap.b=200",
        ]
        assert run_cli(overrides, tmp_path) == EXIT_OK
        report = pd.read_csv(tmp_path / "test.csv")
        assert report.columns.tolist() == [
            "pattern", "group_mean_f", "group_mean_p", "pooled_sd", "diff", "p_two_sided", "p_greater", "p_less"
        ]
        assert ((report["p_two_sided"] >= 1 / 201) & (report["p_two_sided"] <= 1)).all()
        # the planted shift of 1.0 dominates one of the fitted patterns
        assert report["p_greater"].min() < 0.05
        assert "Significance:" in (tmp_path / "test_summary.txt").read_text()

    def test_label_swap(self, fitted, tmp_path):
        groups = pd.read_csv(fitted["simulate"] / "groups.csv")
        groups["group"] = groups["group"].map({"f": "p", "p": "f"})
        swapped_path = tmp_path / "swapped.csv"
        groups.to_csv(swapped_path, index=False)

        reports = []
        for name, path in (("original", fitted["simulate"] / "groups.csv"), ("swapped", swapped_path)):
            overrides = ["command=test", f"command.factors={fitted['fit']}", f"command.groups={path}", "bootstrap.b=50"]
            assert run_cli(overrides, tmp_path / name) == EXIT_OK
            reports.append(pd.read_csv(tmp_path / name / "test.csv"))
        original, swapped = reports
        assert (swapped["diff"] == -original["diff"]).all()
        assert (swapped["p_greater"] == original["p_less"]).all()
        assert (swapped["p_two_sided"] == original["p_two_sided"]).all()

    @pytest.mark.parametrize("learner", ["L002", "1"])
    def test_reconstruct(self, fitted, tmp_path, learner):
        overrides = ["command=reconstruct", f"command.factors={fitted['fit']}", f"command.learner={learner}"]
        assert run_cli(overrides, tmp_path) == EXIT_OK
        frame = pd.read_csv(tmp_path / "reconstruction_L002.csv")
        assert frame.columns.tolist()[:4] == ["feature", "observed", "reconstructed", "residual"]
        assert len(frame) == 8
        svg = (tmp_path / "reconstruction_L002.svg").read_text()
        assert svg.count('id="scaled_') == 8 * 3


class TestExitCodes:
    def test_k_above_rank_bound(self, fitted, compose_cli):
        overrides = ["command=fit", f"command.input={fitted['simulate'] / 'matrix.csv'}", "nmf.k=9"]
        assert run(compose_cli(overrides)) == EXIT_INVALID_INPUT

    def test_missing_input(self, compose_cli, tmp_path):
        cfg = compose_cli(["command=fit", f"command.input={tmp_path / 'nope.csv'}"])
        assert run(cfg) == EXIT_INVALID_INPUT
        assert manifest(tmp_path / "out")["exit_code"] == EXIT_INVALID_INPUT

    def test_groups_not_covering_learners(self, fitted, compose_cli, tmp_path):
        groups = tmp_path / "groups.csv"
        groups.write_text("id,group\nL001,f\nL002,p\n")
        overrides = ["command=test", f"command.factors={fitted['fit']}", f"command.groups={groups}", "bootstrap.b=5"]
        assert run(compose_cli(overrides)) == EXIT_INVALID_INPUT

    def test_unknown_test_mode(self, fitted, compose_cli):
        groups = fitted["simulate"] / "groups.csv"
        overrides = [
            "command=test",
            f"command.factors={fitted['fit']}",
            f"command.groups={groups}",
            "command.mode=slow",
        ]
        assert run(compose_cli(overrides)) == EXIT_INVALID_INPUT

    @pytest.mark.slow
    def test_process_exit_code_and_stderr(self, tmp_path):
        missing = tmp_path / "nope.csv"
        result = subprocess.run(
            [sys.executable, "src/cli.py", "command=fit", f"command.input={missing}", f"out_dir={tmp_path}"],
            cwd=ROOT,
            capture_output=True,
            text=True,
        )
        assert result.returncode == EXIT_INVALID_INPUT
        assert "error:" in result.stderr


class TestLearningStyles:
    def test_ci_reports_styles_of_course_features(self, tmp_path):
        simulate = ["command=simulate", "synth.p=21", "synth.n=30", "synth.k=3"]
        assert run_cli(simulate, tmp_path / "simulate") == EXIT_OK
        fit_overrides = ["command=fit", f"command.input={tmp_path / 'simulate' / 'matrix.csv'}", *FAST_FIT_OVERRIDES]
        assert run_cli(fit_overrides, tmp_path / "fit") == EXIT_OK
        ci_overrides = ["command=ci", f"command.factors={tmp_path / 'fit'}", "command.plot=False", "bootstrap.b=3"]
        assert run_cli(ci_overrides, tmp_path / "ci") == EXIT_OK

        ci = pd.read_csv(tmp_path / "ci" / "ci.csv", keep_default_na=False)
        schema = FeatureSchema.builtin()
        assert ci["feature"].tolist()[:21] == list(schema.names)
        assert ci["styles"].tolist()[:21] == list(schema.style_labels(schema.names))
        assert ci.loc[ci["feature"] == "a_try", "styles"].iloc[0] == "active;sensing"

    def test_schema_can_be_switched_off(self, fitted, tmp_path):
        overrides = ["command=ci", f"command.factors={fitted['fit']}", "command.schema=null", "bootstrap.b=2"]
        assert run_cli(overrides, tmp_path) == EXIT_OK
        assert "styles" not in pd.read_csv(tmp_path / "ci.csv").columns


@pytest.mark.slow
class TestPipeline:
    SHAPE = ["synth.p=21", "synth.n=111", "synth.k=8", "synth.group_shift={pattern:3,delta:0.4,fraction:0.5}"]

    def run_pipeline(self, root: Path) -> Path:
        dirs = {name: root / name for name in ("simulate", "fit", "summary", "ci", "test")}
        groups = dirs["simulate"] / "groups.csv"
        steps = [
            ("simulate", ["command=simulate", *self.SHAPE]),
            ("fit", ["command=fit", f"command.input={dirs['simulate'] / 'matrix.csv'}", "nmf.k=8"]),
            ("summary", ["command=summary", f"command.factors={dirs['fit']}", f"command.groups={groups}"]),
            ("ci", ["command=ci", f"command.factors={dirs['fit']}", "bootstrap.b=1000", "bootstrap.restarts=1"]),
            (
                "test",
                [
                    "command=test",
                    f"command.factors={dirs['fit']}",
                    f"command.groups={groups}",
                    "command.mode=fast",
                    "bootstrap.b=1000",
                ],
            ),
        ]
        for name, overrides in steps:
            assert run_cli(overrides, dirs[name]) == EXIT_OK, name
        return root

    def test_end_to_end_at_course_shape_is_reproducible(self, tmp_path):
        start = time.perf_counter()
        first = self.run_pipeline(tmp_path / "first")
        assert time.perf_counter() - start < 15 * 60

        expected = {
            "fit": ["patterns.csv", "affinities.csv", "meta.json", "patterns.svg"],
            "summary": ["summary.csv"],
            "ci": ["ci.csv", *(f"ci_pattern_{k}.svg" for k in range(1, 9))],
            "test": ["test.csv", "test_summary.txt"],
        }
        for step, names in expected.items():
            for name in names:
                assert (first / step / name).is_file(), f"{step}/{name}"

        second = self.run_pipeline(tmp_path / "second")
        artifacts = sorted(
            path.relative_to(first)
            for path in first.rglob("*")
            if path.is_file() and path.name != "manifest.json" and path.suffix != ".log"
        )
        assert artifacts
        for relative in artifacts:
            assert (second / relative).read_bytes() == (first / relative).read_bytes(), str(relative)
