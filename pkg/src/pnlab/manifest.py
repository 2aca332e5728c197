"""Experiment manifests: everything needed to reproduce a run's outputs."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

__all__ = ["ExperimentManifest", "file_digest", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class ExperimentManifest:
    """``config_text`` plus ``command``/``arguments`` and ``master_seed`` determine all outputs."""

    experiment_id: str
    command: str
    arguments: dict
    config_text: str
    config: dict
    config_hash: str
    master_seed: int
    code_version: str = __version__
    created: str = ""
    finished: str = ""
    outputs: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @staticmethod
    def now() -> str:
        return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")

    def record_outputs(self, root: Path, paths) -> None:
        root = Path(root)
        for p in sorted(paths):
            self.outputs[str(Path(p).relative_to(root))] = file_digest(p)

    def write(self, root) -> Path:
        path = Path(root) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> ExperimentManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(**data)
