"""Run manifests: a JSON record of everything needed to re-run a stage."""

import json
import logging
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from swe_elastography import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
STATUS_RUNNING = "RUNNING"
STATUS_OK = "OK"
STATUS_FAILED = "FAILED"


def library_versions() -> Dict[str, str]:
    return {
        "swe_elastography": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


@dataclass
class RunManifest:
    """Stage record written next to the artifacts it describes."""

    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    parameters: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    stages: List[str] = field(default_factory=list)
    status: str = STATUS_RUNNING
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    versions: Dict[str, str] = field(default_factory=library_versions)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def add_artifact(self, name: str, path: str) -> None:
        self.artifacts[name] = path

    def complete_stage(self, stage: str) -> None:
        self.stages.append(stage)

    def mark_ok(self) -> None:
        self.status = STATUS_OK

    def mark_failed(self, stage: str, error: BaseException) -> None:
        """Record the failing stage; artifacts already written stay listed."""
        self.status = STATUS_FAILED
        self.failed_stage = stage
        self.error = f"{type(error).__name__}: {error}"
        logger.error(f"Stage {stage} failed: {self.error}")

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable({
            "command": self.command,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "stages": self.stages,
            "seeds": self.seeds,
            "parameters": self.parameters,
            "artifacts": self.artifacts,
            "config": self.config,
            "versions": self.versions,
            "created_at": self.created_at,
        })

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(**{key: value for key, value in data.items() if key in cls.__dataclass_fields__})

    @classmethod
    def from_file(cls, path: str) -> "RunManifest":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Manifest not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save_to_file(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
