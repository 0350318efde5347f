"""CSV tables and the plain-text test summary written by the CLI commands."""

from io import StringIO
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.data.io import FLOAT_FORMAT
from src.data.schema import FeatureSchema
from src.evaluation.metrics.bootstrap import CoefficientCI
from src.evaluation.metrics.group_test import SIGNIFICANCE_LEVELS, AffinitySummary, TestReport, significance_stars
from src.models.nmf import FactorPair, learner_index, reconstruct

PathLike = Union[str, Path]

CI_FILE = "ci.csv"
TEST_FILE = "test.csv"
TEST_SUMMARY_FILE = "test_summary.txt"
SUMMARY_FILE = "summary.csv"


def _write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_ci(ci: CoefficientCI, path: PathLike, schema: Optional[FeatureSchema] = None) -> Path:
    """Write the interval table; with a schema, a ``styles`` column names the learning styles of each feature."""
    frame = ci.to_frame()
    if schema is not None:
        frame.insert(1, "styles", list(schema.style_labels(frame["feature"].tolist())))
    return _write_frame(frame, path)


def write_summary(summary: AffinitySummary, path: PathLike) -> Path:
    return _write_frame(summary.to_frame(), path)


def write_test(report: TestReport, path: PathLike) -> Path:
    return _write_frame(report.to_frame(), path)


def reconstruction_frame(
    fp: FactorPair, learner: Union[int, str], observed: Optional[np.ndarray] = None
) -> pd.DataFrame:
    """Per-feature observed and reconstructed values of one learner, followed by the learner's affinities."""
    j = learner_index(fp, learner)
    features = fp.feature_names or tuple(f"feature_{i + 1}" for i in range(fp.p_mat.rows))
    frame = pd.DataFrame({"feature": list(features), "reconstructed": reconstruct(fp, j)})
    if observed is not None:
        frame.insert(1, "observed", np.asarray(observed, dtype=np.float64))
        frame["residual"] = frame["observed"] - frame["reconstructed"]
    for k, label in enumerate(fp.labels):
        frame[f"scaled_{label}"] = fp.a_mat.data[j, k] * fp.p_mat.data[:, k]
    return frame


def affinity_row(fp: FactorPair, learner: Union[int, str]) -> pd.DataFrame:
    j = learner_index(fp, learner)
    learner_id = fp.learner_ids[j] if fp.learner_ids else f"learner_{j + 1}"
    return pd.DataFrame([fp.a_mat.data[j]], index=pd.Index([learner_id], name="id"), columns=list(fp.labels))


def write_reconstruction(
    fp: FactorPair, learner: Union[int, str], path: PathLike, observed: Optional[np.ndarray] = None
) -> Path:
    return _write_frame(reconstruction_frame(fp, learner, observed), path)


def _starred(p_value: float) -> str:
    return f"{p_value:.4f}{significance_stars(p_value)}"


def group_test_table(report: TestReport) -> Table:
    """Group means, pooled sd and the three p-values per pattern, starred at 10%, 5% and 1%."""
    table = Table(title=f"Group differences ({report.mode} mode, B={report.b})")
    for column in ("pattern", "mean f", "mean p", "pooled sd", "diff", "p two-sided", "p f>p", "p f<p"):
        table.add_column(column, justify="left" if column == "pattern" else "right")
    frame = report.to_frame()
    for row in frame.itertuples(index=False):
        table.add_row(
            row.pattern,
            f"{row.group_mean_f:.4f}",
            f"{row.group_mean_p:.4f}",
            f"{row.pooled_sd:.4f}",
            f"{row.diff:+.4f}",
            _starred(row.p_two_sided),
            _starred(row.p_greater),
            _starred(row.p_less),
        )
    return table


def render_test_summary(report: TestReport) -> str:
    buffer = StringIO()
    console = Console(file=buffer, width=120, color_system=None, force_terminal=False)
    console.print(group_test_table(report))
    legend = ", ".join(f"{stars} p < {level:g}" for level, stars in SIGNIFICANCE_LEVELS)
    console.print(f"Significance: {legend}")
    return buffer.getvalue()


def write_test_summary(report: TestReport, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_test_summary(report))
    return path
