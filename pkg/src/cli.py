# ruff: noqa: E402

from pathlib import Path
from typing import Callable

import hydra
import rootutils
from omegaconf import DictConfig

rootutils.setup_root(__file__, indicator=".project-root", pythonpath=True, project_root_env_var=False, dotenv=False)

# ------------------------------------------------------------------------------------ #
# the setup_root above adds the project root dir to PYTHONPATH, so `src` imports work
# without installing the project as a package. Configuration comes from the Hydra config
# tree and command line overrides only; no environment variables are read.
# ------------------------------------------------------------------------------------ #

from src.data.io import (
    Orientation,
    load_factors,
    load_groups,
    load_matrix,
    save_factors,
    save_groups,
    save_matrix,
    save_scaling,
    scale_rows,
)
from src.data.schema import FeatureSchema
from src.data.synthetic import SynthConfig, generate
from src.evaluation import reports
from src.evaluation.metrics.bootstrap import BootstrapConfig, bootstrap_ci
from src.evaluation.metrics.group_test import affinity_summary, group_summary, group_test
from src.evaluation.plots.plot_intervals import plot_intervals
from src.evaluation.plots.plot_patterns import plot_learner, plot_patterns
from src.models.matrix import Matrix
from src.models.nmf import FactorPair, FitConfig, fit, learner_index
from src.utils.logging_utils import RunManifest
from src.utils.pylogger import CommandLogger
from src.utils.utils import exit_with, extras, task_wrapper

log = CommandLogger(__name__)

MATRIX_FILE = "matrix.csv"
SCALING_FILE = "scaling.csv"
PATTERNS_PLOT = "patterns.svg"
GROUPS_FILE = "groups.csv"
TRUE_PATTERNS_FILE = "true_patterns.csv"
TRUE_AFFINITIES_FILE = "true_affinities.csv"


def _out_dir(cfg: DictConfig) -> Path:
    out_dir = Path(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _progress(cfg: DictConfig) -> bool:
    return not cfg.get("quiet", False)


def _load_fitted(cfg: DictConfig, manifest: RunManifest) -> tuple[FactorPair, Matrix, FitConfig]:
    """Read a factors directory written by ``fit`` together with the scaled matrix it was fitted on."""
    factors_dir = Path(cfg.command.factors)
    if not factors_dir.is_dir():
        raise FileNotFoundError(f"Factors directory {factors_dir} does not exist")
    for name in ("meta.json", "patterns.csv", "affinities.csv", MATRIX_FILE):
        manifest.add_input(factors_dir / name)

    reference = load_factors(factors_dir)
    x = load_matrix(factors_dir / MATRIX_FILE, Orientation.LEARNERS_AS_ROWS)
    if reference.learner_ids != x.col_names or reference.feature_names != x.row_names:
        raise ValueError(f"{factors_dir / MATRIX_FILE} does not match the learners and features of the fitted factors")

    cfg_fit = reference.config
    if cfg_fit is None:
        cfg_fit = hydra.utils.instantiate(cfg.nmf, k=reference.k)
        log.warning(f"No fit configuration in {factors_dir}; using the nmf config group")
    return reference, x, cfg_fit


def _save(manifest: RunManifest, path: Path) -> Path:
    manifest.add_output(path)
    return path


def cmd_fit(cfg: DictConfig, manifest: RunManifest) -> None:
    """Load, validate and scale the matrix, factorize it, and write the factors directory."""
    out_dir = _out_dir(cfg)
    cfg_fit: FitConfig = hydra.utils.instantiate(cfg.nmf)

    x = load_matrix(manifest.add_input(cfg.command.input), cfg.command.orientation)
    if cfg.command.get("schema"):
        schema = FeatureSchema.load(cfg.command.schema)
        x = schema.align(x)
        log.info(f"Features validated against schema <{schema.name}>")
    log.info(f"Loaded {x.rows} features x {x.cols} learners")

    if cfg.command.scale:
        x, record = scale_rows(x)
        _save(manifest, save_scaling(record, x.row_names, out_dir / SCALING_FILE))
    else:
        log.info("Row scaling disabled <cfg.command.scale=False>")

    fp = fit(x, cfg_fit)
    if cfg.command.get("labels"):
        fp = fp.with_labels(list(cfg.command.labels))

    save_factors(fp, out_dir)
    for name in ("patterns.csv", "affinities.csv", "meta.json"):
        manifest.add_output(out_dir / name)
    _save(manifest, save_matrix(x, out_dir / MATRIX_FILE, Orientation.LEARNERS_AS_ROWS))
    if cfg.command.plot:
        _save(manifest, plot_patterns(fp, out_dir / PATTERNS_PLOT))

    status = "converged" if fp.converged else "did NOT converge"
    log.info(
        f"k={fp.k}: objective {fp.objective:.6g} (relative residual {fp.relative_residual(x):.4g}), "
        f"{status} after {fp.n_iter} iterations, best of {fp.restarts_used} restarts"
    )


def cmd_ci(cfg: DictConfig, manifest: RunManifest) -> None:
    """Bootstrap percentile intervals for every pattern coefficient, as a table and one plot per pattern."""
    out_dir = _out_dir(cfg)
    reference, x, cfg_fit = _load_fitted(cfg, manifest)
    cfg_boot: BootstrapConfig = hydra.utils.instantiate(cfg.bootstrap, refit=True)

    log.info(f"Bootstrapping {cfg_boot.b} replications at level {cfg_boot.level}")
    schema = FeatureSchema.load(cfg.command.schema) if cfg.command.get("schema") else None

    ci = bootstrap_ci(x, cfg_fit, cfg_boot, reference, progress=_progress(cfg))
    _save(manifest, reports.write_ci(ci, out_dir / reports.CI_FILE, schema=schema))
    if cfg.command.plot:
        for k in range(reference.k):
            path = out_dir / f"ci_pattern_{k + 1}.svg"
            _save(manifest, plot_intervals(ci, k, path, ratio=cfg.command.defining_ratio))

    defining = ci.defining(cfg.command.defining_ratio)
    styles = schema.style_labels(ci.feature_names) if schema else ("",) * len(ci.feature_names)
    for k, label in enumerate(ci.labels):
        names = [
            f"{name} ({style})" if style else name
            for i, (name, style) in enumerate(zip(ci.feature_names, styles))
            if defining[i, k]
        ]
        log.info(f"{label}: defining features {names}")


def cmd_test(cfg: DictConfig, manifest: RunManifest) -> None:
    """Group means, pooled standard deviations and permutation p-values for the three hypothesis sets."""
    out_dir = _out_dir(cfg)
    mode = cfg.command.mode
    if mode not in ("fast", "refit"):
        raise ValueError(f"Unknown test mode {mode!r}, expected 'fast' or 'refit'")
    reference, x, cfg_fit = _load_fitted(cfg, manifest)
    groups = load_groups(manifest.add_input(cfg.command.groups), reference.learner_ids)
    cfg_boot: BootstrapConfig = hydra.utils.instantiate(cfg.bootstrap, refit=mode == "refit")

    report = group_test(x, groups, cfg_fit, cfg_boot, reference=reference, progress=_progress(cfg))
    _save(manifest, reports.write_test(report, out_dir / reports.TEST_FILE))
    _save(manifest, reports.write_test_summary(report, out_dir / reports.TEST_SUMMARY_FILE))
    if not cfg.get("quiet"):
        print(reports.render_test_summary(report), end="")


def _resolve_learner(fp: FactorPair, learner) -> int:
    # an id wins over a position when both readings are possible
    ids = fp.learner_ids or ()
    if str(learner) in ids:
        return ids.index(str(learner))
    if isinstance(learner, str):
        raise ValueError(f"Unknown learner id {learner!r}")
    return learner_index(fp, int(learner))


def cmd_reconstruct(cfg: DictConfig, manifest: RunManifest) -> None:
    """Observed against reconstructed features of one learner, with the learner's affinity row."""
    out_dir = _out_dir(cfg)
    reference, x, _ = _load_fitted(cfg, manifest)
    j = _resolve_learner(reference, cfg.command.learner)
    learner_id = reference.learner_ids[j]
    observed = x.column(j)

    frame = reports.reconstruction_frame(reference, j, observed)
    _save(manifest, reports.write_reconstruction(reference, j, out_dir / f"reconstruction_{learner_id}.csv", observed))
    if cfg.command.plot:
        _save(manifest, plot_learner(reference, j, out_dir / f"reconstruction_{learner_id}.svg", observed))

    affinities = reports.affinity_row(reference, j)
    log.info(f"Affinities of {learner_id}:\n{affinities.to_string(float_format=lambda v: f'{v:.4f}')}")
    columns = frame[["feature", "observed", "reconstructed"]]
    log.info(f"Reconstruction of {learner_id}:\n{columns.to_string(index=False)}")


def cmd_simulate(cfg: DictConfig, manifest: RunManifest) -> None:
    """Synthetic matrix, optional planted groups and the ground-truth factors."""
    out_dir = _out_dir(cfg)
    cfg_synth: SynthConfig = hydra.utils.instantiate(cfg.synth)
    data = generate(cfg_synth)

    _save(manifest, save_matrix(data.x, out_dir / MATRIX_FILE, Orientation.LEARNERS_AS_ROWS))
    _save(manifest, save_matrix(data.p_true, out_dir / TRUE_PATTERNS_FILE, Orientation.FEATURES_AS_ROWS))
    _save(manifest, save_matrix(data.a_true, out_dir / TRUE_AFFINITIES_FILE, Orientation.FEATURES_AS_ROWS))
    if data.groups is not None:
        _save(manifest, save_groups(data.groups, out_dir / GROUPS_FILE, data.x.col_names))
    log.info(f"Simulated {cfg_synth.p} features x {cfg_synth.n} learners from {cfg_synth.k} patterns")


def cmd_summary(cfg: DictConfig, manifest: RunManifest) -> None:
    """Quartiles and mean of every affinity column, with group columns when groups are given."""
    out_dir = _out_dir(cfg)
    factors_dir = Path(cfg.command.factors)
    manifest.add_input(factors_dir / "affinities.csv")
    reference = load_factors(factors_dir)
    if cfg.command.get("groups"):
        groups = load_groups(manifest.add_input(cfg.command.groups), reference.learner_ids)
        summary = group_summary(reference, groups)
    else:
        summary = affinity_summary(reference)

    _save(manifest, reports.write_summary(summary, out_dir / reports.SUMMARY_FILE))
    log.info(f"Affinity summary:\n{summary.to_frame().to_string(index=False, float_format=lambda v: f'{v:.4f}')}")


COMMANDS: dict[str, Callable[[DictConfig, RunManifest], None]] = {
    "fit": cmd_fit,
    "ci": cmd_ci,
    "test": cmd_test,
    "reconstruct": cmd_reconstruct,
    "simulate": cmd_simulate,
    "summary": cmd_summary,
}


@task_wrapper
def run(cfg: DictConfig, manifest: RunManifest) -> None:
    """Dispatches to the selected command.

    This method is wrapped in the @task_wrapper decorator, that maps failures to exit codes and writes the run
    manifest.

    :param cfg: A DictConfig configuration composed by Hydra.
    :param manifest: Collects inputs, outputs and the outcome of the run.
    """
    name = cfg.command.name
    if name not in COMMANDS:
        raise ValueError(f"Unknown command {name!r}, expected one of {sorted(COMMANDS)}")
    log.info(f"Running <{name}>")
    COMMANDS[name](cfg, manifest)


@hydra.main(version_base="1.3", config_path="../configs", config_name="cli.yaml")
def main(cfg: DictConfig) -> None:
    """Main entry point for all commands.

    :param cfg: DictConfig configuration composed by Hydra.
    """
    # apply extra utilities
    # (e.g. quiet logging, print cfg tree, etc.)
    extras(cfg)

    exit_with(run(cfg))


if __name__ == "__main__":
    main()
