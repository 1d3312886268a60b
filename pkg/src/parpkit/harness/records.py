"""Run records and atomic artifact writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path


class RecordParseError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"malformed run record {path}: {reason}")
        self.path = str(path)


def atomic_write(path, data: bytes | str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class RunRecord:
    """Result of one run; written once and never modified.

    ``final`` holds dev and test metrics; ``trace`` rows are
    ``(step, lr, train loss)``; ``trajectory`` is the IOU of each re-prune
    mask with the initial mask (PARP runs only).
    """

    digest: str
    code_version: str
    kind: str
    config: dict
    method: str | None = None
    task: str | None = None
    sparsity: float | None = None
    seed: int | None = None
    trace: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    mask_paths: list = field(default_factory=list)
    mask_checksums: list = field(default_factory=list)
    runs_consumed: int = 0
    total_update_steps: int = 0
    discovery_runs: int = 0
    trajectory: list = field(default_factory=list)
    children: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def write(self, path) -> Path:
        return atomic_write(path, self.to_json())

    def trace_csv(self) -> str:
        return csv_text(["step", "lr", "loss"], ((int(s), float(lr), float(l)) for s, lr, l in self.trace))

    @classmethod
    def load(cls, path) -> "RunRecord":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise RecordParseError(path, str(exc)) from None
        if not isinstance(data, dict):
            raise RecordParseError(path, "top level is not an object")
        missing = [k for k in ("digest", "code_version", "kind", "config") if k not in data]
        if missing:
            raise RecordParseError(path, f"missing field {missing[0]!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise RecordParseError(path, str(exc)) from None
