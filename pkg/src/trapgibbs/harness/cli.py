"""trapgibbs command line: one subcommand per pipeline plus verify-all.

Each run writes run.json (the RunRecord) and one CSV per table into --out.
Exit codes: 0 every check passed, 2 some check failed, 3 no failure but
some check inconclusive, 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .. import __version__
from . import pipelines as pl
from .config import ConfigError, Param, parse_bool, parse_floats, parse_ints, parse_optional_float, read_config, repeated_flags, resolve
from .records import EXIT_USAGE, FAIL, ResultEntry, RunRecord, write_csv


def _pairs(text: str) -> list[tuple[int, float]]:
    """'3/2, 2/1.5' -> [(3, 2.0), (2, 1.5)]."""
    out = []
    for item in str(text).replace(" ", "").split(","):
        d, s = item.split("/")
        out.append((int(d), float(s)))
    return out


def _expect(text: str) -> str:
    if text not in ("auto", "none", "bounded", "divergent"):
        raise ValueError("expect must be auto, none, bounded or divergent")
    return text


def _floats_or_auto(text: str):
    return None if str(text).strip().lower() in ("", "auto") else parse_floats(text)


SUBCOMMANDS: dict[str, tuple[list[Param], object, str]] = {
    "spectrum": (
        [
            Param("d", int, 1, "dimension"),
            Param("s", float, 2.0, "trap exponent"),
            Param("n_eigs", int, 200, "number of eigenvalues"),
            Param("n_grid", int, 8192, "grid points"),
            Param("extrapolate", parse_bool, True, "Richardson h -> 0 extrapolation"),
            Param("tolerance", float, 1e-4, "relative error allowed against the harmonic oracle"),
        ],
        pl.run_spectrum,
        "lowest eigenvalues, checked against 2n+1 / 4n+d when s = 2",
    ),
    "weyl": (
        [
            Param("d", int, 1),
            Param("s", float, 2.0),
            Param("top_energy", float, 2000.0, "largest Λ"),
            Param("n_grid", int, 8192),
            Param("extrapolate", parse_bool, True),
            Param("tolerance", float, 0.05, "relative tolerance on exponent and prefactor"),
        ],
        pl.run_weyl,
        "counting function exponent and prefactor",
    ),
    "schatten": (
        [
            Param("d", int, 1),
            Param("s", float, 2.0),
            Param("p", _floats_or_auto, None, "trace powers; auto covers all three regimes"),
            Param("N", parse_ints, [64, 128, 256, 512], "truncation levels"),
            Param("tail_p", parse_optional_float, None, "power for the tail decay fit"),
            Param("top_energy", float, 2000.0),
            Param("n_grid", int, 8192),
            Param("conv_tol", float, 1e-6, "largest doubling change in the convergent regime"),
        ],
        pl.run_schatten,
        "truncated traces sum λ_n^{-2p} across regimes",
    ),
    "green": (
        [
            Param("d", int, 3),
            Param("s", float, 2.0),
            Param("r_max", float, 12.0),
            Param("n_grid", int, 2048),
            Param("p", _floats_or_auto, None, "L^p exponents inside the window"),
            Param("beta", parse_floats, [0.5, 0.9], "origin decay exponents"),
            Param("stability_tol", float, 0.05, "relative change allowed under grid doubling"),
        ],
        pl.run_green,
        "Green diagonal: eigen-sum vs linear solve, L^p window, origin decay",
    ),
    "heatkernel": (
        [
            Param("t", parse_floats, [0.1, 1.0, 3.0]),
            Param("r", parse_floats, [0.5, 1.0, 2.0, 4.0]),
            Param("pairs", _pairs, [(3, 2.0), (2, 1.5), (1, 4.0)], "(d/s) pairs for trace ratios"),
        ],
        pl.run_heatkernel,
        "inverse-square heat kernel identities and trace ratios",
    ),
    "sample": (
        [
            Param("d", int, 1),
            Param("s", float, 1.5),
            Param("N", parse_ints, [32, 64, 128, 256, 512]),
            Param("n_samples", int, 100_000),
            Param("n_grid", int, 8192),
        ],
        pl.run_sample,
        "Gaussian field variance growth, Wick mass moments, Cauchy rate",
    ),
    "partition": (
        [
            Param("d", int, 1),
            Param("s", float, 1.5),
            Param("p", float, 6.0),
            Param("alpha", float, 1.0),
            Param("K", float, 1.0),
            Param("N", parse_ints, [64, 128, 256]),
            Param("n_samples", int, 100_000),
            Param("n_grid", int, 4096),
            Param("expect", _expect, "auto", "auto, none, bounded or divergent"),
        ],
        pl.run_partition,
        "truncated partition function along N with a divergence verdict",
    ),
    "phase": (
        [
            Param("d", int, 1),
            Param("s", float, 1.5),
            Param("K", float, 1.0),
            Param("alpha", float, 1.0),
            Param("p_grid", parse_floats, parse_floats("3:7:0.5")),
            Param("N", parse_ints, [64, 128, 256]),
            Param("n_samples", int, 20_000),
            Param("n_grid", int, 4096),
            Param("workers", int, 1, "processes for the p sweep"),
        ],
        pl.run_phase,
        "verdict per p across the critical power",
    ),
    "drift-sub": (
        [
            Param("s", float, 1.5),
            Param("p", float, 6.0),
            Param("alpha", float, 1000.0),
            Param("K", float, 1.0),
            Param("M", parse_ints, [8, 16, 32, 64, 128]),
            Param("c", float, 100.0),
            Param("J", int, 256),
            Param("n_samples", int, 600),
            Param("top_energy", float, 300.0),
            Param("n_grid", int, 8192),
        ],
        pl.run_drift_sub,
        "trial-drift objective for a subharmonic trap",
    ),
    "drift-super": (
        [
            Param("s", float, 4.0),
            Param("p", float, 8.0),
            Param("alpha", float, 1000.0),
            Param("beta", float, 0.5),
            Param("K", parse_optional_float, None, "mass cutoff; auto is β²‖Q‖² + 1.5"),
            Param("rho", parse_floats, [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]),
            Param("c", float, 100.0),
            Param("n_samples", int, 1000),
            Param("top_energy", float, 1500.0),
            Param("n_grid", int, 8192),
        ],
        pl.run_drift_super,
        "rescaled ground-state terms A-D for a superharmonic trap",
    ),
    "semiclassical": (
        [
            Param("s", float, 2.0),
            Param("K", float, 0.0),
            Param("E", float, 1.0),
            Param("husimi_rank", int, 3),
            Param("hbar", float, 0.25),
            Param("Lambda", _floats_or_auto, None, "energies for the ħN comparison"),
            Param("top_energy", float, 1100.0),
            Param("n_grid", int, 8192),
        ],
        pl.run_semiclassical,
        "phase-space volume, classical energy, Husimi identities, ħN",
    ),
    "fractional": (
        [
            Param("alpha", float, 1.0),
            Param("s", float, 2.0),
            Param("R", float, 40.0),
            Param("n_grid", int, 2048),
            Param("n_eigs", int, 1000),
            Param("gamma", _floats_or_auto, None, "trace powers; auto covers all three regimes"),
            Param("green_p", _floats_or_auto, None, "exponents for the Green window verdicts"),
        ],
        pl.run_fractional,
        "fractional operator spectrum, Weyl law, traces, Green window",
    ),
}

# (subcommand, overrides) pairs run by verify-all; n_samples entries are scaled down by --quick
VERIFY_PLAN = [
    ("spectrum", {"d": 1, "s": 2.0, "n_eigs": 101}),
    ("spectrum", {"d": 3, "s": 2.0, "n_eigs": 101}),
    ("weyl", {"d": 1, "s": 2.0}),
    ("schatten", {"d": 1, "s": 2.0}),
    ("green", {}),
    ("heatkernel", {}),
    ("sample", {"n_samples": 100_000}),
    ("partition", {"p": 6.0, "n_samples": 20_000}),
    ("drift-sub", {}),
    ("drift-super", {}),
    ("semiclassical", {}),
    ("fractional", {}),
]
QUICK = {
    "spectrum": {"n_grid": 4096, "tolerance": 1e-3},
    "weyl": {"top_energy": 600.0, "n_grid": 4096},
    "schatten": {"top_energy": 1200.0, "n_grid": 4096},
    "green": {"n_grid": 1024},
    "sample": {"n_samples": 10_000},
    "partition": {"n_samples": 20_000, "N": [32, 64, 128]},
    "drift-sub": {"n_samples": 200, "M": [8, 16, 32, 64]},
    "drift-super": {"n_samples": 300},
    "semiclassical": {"top_energy": 400.0, "n_grid": 4096},
    "fractional": {"R": 40.0, "n_grid": 1024, "n_eigs": 400},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trapgibbs", description="Numerical laboratory for radial anharmonic traps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name, (params, _, helptext) in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=helptext)
        _common(sp)
        for p in params:
            sp.add_argument(p.flag, dest=p.name, type=p.kind, default=None, help=f"{p.help} (default {p.default})".strip())
    va = sub.add_parser("verify-all", help="run every pipeline with its acceptance settings")
    _common(va)
    va.add_argument("--quick", action="store_true", help="smaller grids and sample counts")
    return parser


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=Path, help="key = value file with one section per subcommand")
    sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    sp.add_argument("--out", type=Path, default=None, help="output directory (default runs/<subcommand>)")


def run(subcommand: str, params: dict, seed: int = 0, out: Path | None = None) -> RunRecord:
    """Execute one pipeline, persist its record and tables, return the record."""
    fn = SUBCOMMANDS[subcommand][1]
    t0 = time.perf_counter()
    entries, tables = fn(params, seed)
    rec = RunRecord(__version__, subcommand, params, seed, time.perf_counter() - t0, entries)
    if out is not None:
        rec.save(out)
        for stem, (header, rows) in tables.items():
            write_csv(out / f"{stem}.csv", header, rows)
    return rec


def defaults(subcommand: str, **overrides) -> dict:
    params = {p.name: p.default for p in SUBCOMMANDS[subcommand][0]}
    unknown = set(overrides) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameters for {subcommand}: {sorted(unknown)}")
    params.update(overrides)
    return params


def replay(record: RunRecord, out: Path | None = None) -> RunRecord:
    """Rerun a record's subcommand with its stored parameters and seed."""
    if record.subcommand == "verify-all":
        raise ValueError("replay individual subcommands")
    params = defaults(record.subcommand)
    fresh = {p.name: p.kind for p in SUBCOMMANDS[record.subcommand][0]}
    for k, v in record.params.items():
        if k not in fresh:
            raise ConfigError(f"record carries unknown parameter {k!r}")
        params[k] = [tuple(x) for x in v] if k == "pairs" else v
    return run(record.subcommand, params, record.seed, out)


def verify_all(seed: int, quick: bool, out: Path | None) -> RunRecord:
    t0 = time.perf_counter()
    entries, plan_params = [], {}
    for k, (name, over) in enumerate(VERIFY_PLAN):
        params = defaults(name, **over)
        if quick:
            params.update(QUICK.get(name, {}))
        tag = f"{k:02d}-{name}"
        plan_params[tag] = params
        try:
            rec = run(name, params, seed, None if out is None else out / tag)
        except (ValueError, RuntimeError) as exc:
            # one broken stage should not hide the others
            entries.append(ResultEntry(f"{tag}.error", str(exc), status=FAIL))
            continue
        for e in rec.results:
            entries.append(ResultEntry(f"{tag}.{e.name}", e.value, e.stderr, e.tolerance, e.status))
    rec = RunRecord(__version__, "verify-all", {"quick": quick, "plan": plan_params}, seed, time.perf_counter() - t0, entries)
    if out is not None:
        rec.save(out)
    return rec


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    bad = repeated_flags(argv)
    if bad:
        parser.error(f"conflicting values for {', '.join(bad)}")
    name = args.subcommand
    out = args.out or Path("runs") / name
    try:
        file_values = read_config(args.config, list(SUBCOMMANDS) + ["verify-all"]) if args.config else {}
        file_seed = file_values.get(name, {}).pop("seed", None)
        seed = args.seed if args.seed is not None else int(file_seed or 0)
        if name == "verify-all":
            extra = set(file_values.get(name, {})) - {"quick"}
            if extra:
                raise ConfigError(f"unknown config keys for verify-all: {sorted(extra)}")
            quick = args.quick or parse_bool(file_values.get(name, {}).get("quick", "false"))
            rec = verify_all(seed, quick, out)
        else:
            params = resolve(SUBCOMMANDS[name][0], file_values.get(name, {}), vars(args))
            rec = run(name, params, seed, out)
    except (ConfigError, ValueError) as exc:
        print(f"trapgibbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    width = max(len(e.name) for e in rec.results) if rec.results else 0
    for e in rec.results:
        print(f"{e.status:>12}  {e.name:<{width}}  {e.value}")
    print(f"wrote {out / 'run.json'} ({rec.wall_clock:.1f} s); cache {os.environ.get('TRAPGIBBS_CACHE', '~/.cache/trapgibbs')}")
    return rec.exit_code()


if __name__ == "__main__":
    sys.exit(main())
