# services/manifest.py
from __future__ import annotations

import json
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List

PROJECT_ROOT = Path(__file__).resolve().parent.parent


def build_id() -> str:
    """Short git revision of the checkout, or 'unknown' outside a repo."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=PROJECT_ROOT,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


@dataclass
class ExperimentManifest:
    command: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    build: str = field(default_factory=build_id)
    started_at: float = field(default_factory=time.time)
    finished_at: float = 0.0

    def finish(self) -> "ExperimentManifest":
        self.finished_at = time.time()
        return self

    @property
    def elapsed(self) -> float:
        return max(0.0, self.finished_at - self.started_at)


def write_manifest(path, manifest: ExperimentManifest) -> Path:
    """Write via a temp file + rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {**asdict(manifest), "elapsed_s": manifest.elapsed}
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=str)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path
