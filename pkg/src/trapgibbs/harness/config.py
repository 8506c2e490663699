"""Strict key = value configuration with one section per subcommand.

A config file looks like

    [partition]
    d = 1
    s = 1.5
    N = 64, 128, 256

Keys may be written with dashes or underscores.  Unknown sections, unknown
keys and repeated keys are errors; command line flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def parse_floats(text: str) -> list[float]:
    """Comma list, or lo:hi:step with hi included when it lands on the grid."""
    text = str(text).replace(" ", "")
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"range must be lo:hi:step with step > 0, got {text!r}")
        lo, hi, step = parts
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + k * step, 12) for k in range(n)]
    return [float(x) for x in text.split(",") if x]


def parse_optional_float(text: str) -> float | None:
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


@dataclass(frozen=True)
class Param:
    name: str
    kind: object  # callable str -> value
    default: object
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def read_config(path: str | Path, sections) -> dict[str, dict[str, str]]:
    """Raw string values per section; rejects unknown sections and duplicates."""
    cp = configparser.ConfigParser(strict=True, interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep case: N and n are different keys
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for sec in cp.sections():
        if sec not in sections:
            raise ConfigError(f"unknown config section [{sec}]")
        out[sec] = {normalize_key(k): v for k, v in cp.items(sec)}
    return out


def resolve(params: list[Param], file_values: dict[str, str], flag_values: dict[str, object]) -> dict:
    """Defaults, then the config section, then flags."""
    known = {p.name: p for p in params}
    for key in file_values:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}; accepted: {', '.join(sorted(known))}")
    out = {}
    for p in params:
        if flag_values.get(p.name) is not None:
            out[p.name] = flag_values[p.name]
        elif p.name in file_values:
            try:
                out[p.name] = p.kind(file_values[p.name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {p.name}: {file_values[p.name]!r} ({exc})") from exc
        else:
            out[p.name] = p.default
    return out


def repeated_flags(argv: list[str]) -> list[str]:
    """Flags given more than once with different values."""
    seen: dict[str, str] = {}
    bad = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--"):
            if "=" in tok:
                key, val = tok.split("=", 1)
            else:
                key = tok
                nxt = argv[i + 1] if i + 1 < len(argv) else ""
                val = nxt if not nxt.startswith("--") else ""
            key = normalize_key(key)
            if key in seen and seen[key] != val:
                bad.append(key)
            seen[key] = val
        i += 1
    return bad
