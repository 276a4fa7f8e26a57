"""
Check results, run manifests and the JSON/CSV writers behind every CLI report.
"""

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__

SCHEMA_VERSION = "1.0"


@dataclass
class CheckResult:
    """One verified inequality or identity with its observed value and tolerance."""

    name: str
    observed: float
    tolerance: float
    passed: bool
    detail: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def at_most(cls, name: str, observed: float, tolerance: float, **detail) -> "CheckResult":
        observed = float(observed)
        return cls(name, observed, float(tolerance), bool(observed <= tolerance), detail)

    @classmethod
    def at_least(cls, name: str, observed: float, tolerance: float, **detail) -> "CheckResult":
        observed = float(observed)
        detail.setdefault("direction", "observed >= tolerance")
        return cls(name, observed, float(tolerance), bool(observed >= tolerance), detail)

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(asdict(self))


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def canonical_hash(document: Any) -> str:
    """sha256 of the canonical JSON form; independent of key order."""
    text = json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def suite_report(suite: str, checks: Sequence[CheckResult], **extra) -> Dict[str, Any]:
    report = {
        "schema_version": SCHEMA_VERSION,
        "suite": suite,
        "passed": all(c.passed for c in checks),
        "n_checks": len(checks),
        "n_failed": sum(1 for c in checks if not c.passed),
        "checks": [c.to_dict() for c in checks],
    }
    report.update(to_jsonable(extra))
    return report


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def format_float(x: float) -> str:
    return repr(float(x))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    """Provenance of one CLI invocation; every emitted file is listed in ``files``."""

    config_hash: str
    subcommand: str
    seed: Optional[int] = None
    version: str = __version__
    started_at: str = field(default_factory=utc_now)
    finished_at: Optional[str] = None
    permutation: List[int] = field(default_factory=list)
    files: List[str] = field(default_factory=list)

    def record(self, path: Path) -> Path:
        name = Path(path).name
        if name not in self.files:
            self.files.append(name)
        return path

    def finish(self) -> "RunManifest":
        self.finished_at = utc_now()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(asdict(self))

    def write(self, out_dir: Path, name: str = "run_meta.json") -> Path:
        self.record(Path(out_dir) / name)
        self.finish()
        return write_json(Path(out_dir) / name, self.to_dict())
