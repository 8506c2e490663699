"""Run records and CSV tables written by every CLI invocation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
EXIT_PASS, EXIT_USAGE, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def plain(value):
    """numpy scalars and arrays to JSON-native values."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


@dataclass
class ResultEntry:
    name: str
    value: object
    stderr: float | None = None
    tolerance: float | None = None
    status: str = PASS

    def __post_init__(self) -> None:
        if self.status not in (PASS, FAIL, INCONCLUSIVE):
            raise ValueError(f"unknown status {self.status!r}")
        self.value = plain(self.value)
        self.stderr = None if self.stderr is None else float(self.stderr)
        self.tolerance = None if self.tolerance is None else float(self.tolerance)


def within(name: str, value: float, target: float, tol: float, *, relative: bool = True, stderr: float | None = None) -> ResultEntry:
    """Pass when |value - target| <= tol (relative to |target| unless ``relative`` is off)."""
    scale = abs(target) if relative else 1.0
    ok = math.isfinite(value) and abs(value - target) <= tol * scale
    return ResultEntry(name, value, stderr, tol, PASS if ok else FAIL)


def flag(name: str, ok: bool, value=None) -> ResultEntry:
    return ResultEntry(name, bool(ok) if value is None else value, status=PASS if ok else FAIL)


@dataclass
class RunRecord:
    version: str
    subcommand: str
    params: dict
    seed: int
    wall_clock: float
    results: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.params = plain(self.params)
        self.results = [r if isinstance(r, ResultEntry) else ResultEntry(**r) for r in self.results]

    def statuses(self) -> list[str]:
        return [r.status for r in self.results]

    def exit_code(self) -> int:
        st = self.statuses()
        if FAIL in st:
            return EXIT_FAIL
        if INCONCLUSIVE in st:
            return EXIT_INCONCLUSIVE
        return EXIT_PASS

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> RunRecord:
        return cls(**json.loads(text))

    def save(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "run.json"
        path.write_text(self.dumps() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> RunRecord:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path: Path, header, rows) -> None:
    """Plain CSV with '.' decimals; floats use repr so values round-trip."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else plain(x) for x in row])
