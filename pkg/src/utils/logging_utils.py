import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from omegaconf import DictConfig, OmegaConf

from src.utils import pylogger

log = pylogger.CommandLogger(__name__)

MANIFEST_FILE = "manifest.json"
VERSION = "1.0.0"


def file_digest(path: Union[str, Path]) -> str:
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """What a command read, what it wrote and how it ended.

    Input digests allow a later byte-level audit of a run.
    """

    command: str
    config: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = VERSION
    exit_code: Optional[int] = None
    wall_time_s: Optional[float] = None
    _started: float = field(default_factory=time.perf_counter, repr=False)

    @classmethod
    def start(cls, cfg: DictConfig) -> "RunManifest":
        config = OmegaConf.to_container(cfg, resolve=True)
        return cls(command=cfg.command.name, config=config)

    def add_input(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_digest(path)
        return path

    def add_output(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.outputs[path.name] = file_digest(path)
        return path

    def finish(self, exit_code: int) -> None:
        self.exit_code = exit_code
        self.wall_time_s = time.perf_counter() - self._started

    def to_dict(self) -> dict[str, Any]:
        manifest = asdict(self)
        manifest.pop("_started")
        return manifest


def write_manifest(manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_FILE
    with open(path, "w") as file:
        json.dump(manifest.to_dict(), file, indent=2, sort_keys=True)
        file.write("\n")
    log.info(f"Manifest written to {path}")
    return path
