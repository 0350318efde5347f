import logging
import sys
import warnings
from typing import Callable

import numpy as np
from hydra.errors import InstantiationException
from omegaconf import DictConfig
from omegaconf.errors import MissingMandatoryValue
from rich.console import Console

from src.utils import pylogger, rich_utils
from src.utils.logging_utils import RunManifest, write_manifest

log = pylogger.CommandLogger(__name__)

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_NUMERICAL_FAILURE = 2

# LinAlgError subclasses ValueError, so numerical failures are matched first
NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError, RuntimeError)
VALIDATION_ERRORS = (ValueError, FileNotFoundError, KeyError, InstantiationException, MissingMandatoryValue)


def extras(cfg: DictConfig) -> None:
    """Applies optional utilities before the task is started.

    Utilities:
        - Quieting info logs and progress bars
        - Ignoring python warnings
        - Rich config printing

    :param cfg: A DictConfig object containing the config tree.
    """
    if cfg.get("quiet"):
        logging.getLogger().setLevel(logging.WARNING)

    # return if no `extras` config
    if not cfg.get("extras"):
        log.warning("Extras config not found! <cfg.extras=null>")
        return

    # disable python warnings
    if cfg.extras.get("ignore_warnings"):
        log.info("Disabling python warnings! <cfg.extras.ignore_warnings=True>")
        warnings.filterwarnings("ignore")

    # pretty print config tree using Rich library
    if cfg.extras.get("print_config") and not cfg.get("quiet"):
        log.info("Printing config tree with Rich! <cfg.extras.print_config=True>")
        rich_utils.print_config_tree(cfg, resolve=True, save_to_file=True)


def _report_error(ex: Exception) -> None:
    Console(stderr=True, color_system=None).print(f"error: {ex}", markup=False, highlight=False)


def task_wrapper(task_func: Callable) -> Callable:
    """Decorator that turns a command into an exit code and always leaves a manifest behind.

    Validation errors (bad input files, infeasible configurations) map to exit code 1 and numerical failures
    (non-converging solves, exhausted bootstrap redraws) to exit code 2, each with a diagnostic on standard
    error. Anything else is logged and re-raised.

    Example:
    ```
    @utils.task_wrapper
    def fit(cfg: DictConfig, manifest: RunManifest) -> None:
        ...
    ```

    :param task_func: The command function, called as ``task_func(cfg=cfg, manifest=manifest)``.

    :return: The wrapped function, returning the exit code.
    """

    def wrap(cfg: DictConfig) -> int:
        pylogger.set_active_command(cfg.command.name)
        manifest = RunManifest.start(cfg)
        exit_code = EXIT_OK
        try:
            task_func(cfg=cfg, manifest=manifest)

        except NUMERICAL_ERRORS as ex:
            log.error(f"Numerical failure: {ex}")
            _report_error(ex)
            exit_code = EXIT_NUMERICAL_FAILURE

        except VALIDATION_ERRORS as ex:
            log.error(f"Invalid input: {ex}")
            _report_error(ex)
            exit_code = EXIT_INVALID_INPUT

        except Exception:
            log.exception("")
            exit_code = EXIT_INVALID_INPUT
            raise

        # things to always do after either success or exception
        finally:
            manifest.finish(exit_code)
            write_manifest(manifest, cfg.paths.output_dir)
            log.info(f"Output dir: {cfg.paths.output_dir}")
            pylogger.set_active_command(None)

        return exit_code

    return wrap


def exit_with(code: int) -> None:
    if code != EXIT_OK:
        sys.exit(code)
