"""One pipeline per subcommand: module calls in, result entries and CSV tables out.

Every pipeline takes the resolved parameter dict and the master seed and
returns (entries, tables) with tables mapping a CSV stem to (header, rows).
Entries without a tolerance are informational.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import besselheat as bh
from .. import fractional as fr
from .. import gaussfield as gf
from .. import gibbsmc as gm
from .. import semiclassical as sc
from .. import specdiag as sd
from .. import trapspec as ts
from .. import variational as va
from .records import FAIL, INCONCLUSIVE, PASS, ResultEntry, flag, within

WICK_SIGMAS = 3.0


# ---------------------------------------------------------------- spectra


def energy_guess(d: int, s: float, n_modes: int) -> float:
    """Energy below which about n_modes half-line (d >= 2) or full-line eigenvalues lie."""
    vol1 = sc.phase_space_volume(sc.PhaseSpaceQuery(s))
    k = 1.0 if d == 1 else 2.0  # the half line carries about half the phase space
    return (k * 2 * math.pi * n_modes / vol1) ** (1.0 / (0.5 + 1.0 / s))


def spectrum_for_modes(d: int, s: float, n_modes: int, n_grid: int, *, vectors: bool, extrapolate: bool = False) -> ts.SpectralDecomposition:
    """Smallest doubling of the semiclassical energy guess that yields n_modes valid eigenpairs."""
    E = 1.3 * energy_guess(d, s, n_modes)
    for _ in range(8):
        spec = ts.solve_below(d, s, E, n_grid, vectors=vectors, extrapolate=extrapolate, cache=True)
        if spec.n_eigs >= n_modes:
            return spec
        E *= 1.5
    raise RuntimeError(f"could not reach {n_modes} eigenvalues for d = {d}, s = {s}")


def spectrum_oracle(d: int, s: float, n: np.ndarray) -> np.ndarray | None:
    """Exact eigenvalues of the radial harmonic trap: 2n + 1 on the line, 4n + d on the half line."""
    if s != 2:
        return None
    return 2.0 * n + 1.0 if d == 1 else 4.0 * n + d


def run_spectrum(P: dict, seed: int):
    d, s, k = P["d"], P["s"], P["n_eigs"]
    E = 1.3 * energy_guess(d, s, k)
    spec = None
    for _ in range(8):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ts.TruncationWarning)
            spec = ts.solve(ts.TrapConfig.for_energy(d, s, E, P["n_grid"], k), vectors=False, extrapolate=P["extrapolate"], cache=True)
        if spec.valid:
            break
        E *= 1.5
    n = np.arange(k)
    exact = spectrum_oracle(d, s, n)
    entries = [flag("box_valid", spec.valid), ResultEntry("r_max", spec.config.r_max, status=PASS)]
    rows = []
    for i in range(k):
        row = [i, spec.lambda_sq[i], spec.lambda_sq_grid[i]]
        if exact is not None:
            row.append(exact[i])
        rows.append(row)
    header = ["n", "lambda_sq", "lambda_sq_matrix"] + (["exact"] if exact is not None else [])
    if exact is not None:
        top = min(k, 101)
        err = float(np.max(np.abs(spec.lambda_sq[:top] - exact[:top]) / exact[:top]))
        entries.append(within("max_rel_error_n_le_100", err, 0.0, P["tolerance"], relative=False))
    return entries, {"spectrum": (header, rows)}


def run_weyl(P: dict, seed: int):
    spec = ts.solve_below(P["d"], P["s"], P["top_energy"], P["n_grid"], extrapolate=P["extrapolate"], cache=True)
    fit = sd.weyl_fit(spec)
    entries = [within("weyl_exponent", fit.exponent, fit.predicted, P["tolerance"]), ResultEntry("n_eigs", spec.n_eigs)]
    entries += [ResultEntry("c_low", fit.c_low), ResultEntry("c_high", fit.c_high)]
    if P["d"] == 1 and P["s"] == 2:
        entries.append(within("weyl_prefactor", fit.prefactor, 0.5, P["tolerance"]))
    else:
        entries.append(ResultEntry("weyl_prefactor", fit.prefactor))
    rows = [[L, c, c * L**-fit.predicted] for L, c in zip(fit.Lambda, fit.counts)]
    return entries, {"weyl": (["Lambda", "count", "scaled_count"], rows)}


def default_trace_powers(s: float) -> list[float]:
    crit = sd.critical_trace_exponent(s)
    return [crit + 2.0, crit, crit - 0.5]


def run_schatten(P: dict, seed: int):
    d, s = P["d"], P["s"]
    spec = ts.solve_below(d, s, P["top_energy"], P["n_grid"], extrapolate=True, cache=True)
    Ns = P["N"]
    if Ns[-1] >= spec.n_eigs:
        raise ValueError(f"N = {Ns[-1]} needs more than the {spec.n_eigs} computed eigenvalues")
    powers = P["p"] or default_trace_powers(s)
    entries, rows = [], []
    for p in powers:
        sw = sd.trace_sweep(spec, p, Ns)
        tag = f"p={p:g}"
        if sw["regime"] == "convergent":
            entries.append(within(f"{tag}.doubling_change", float(sw["doubling_change"][-1]), 0.0, P["conv_tol"], relative=False))
        elif sw["regime"] == "log-critical":
            r2 = sw["log_quadratic_r2"]
            entries.append(ResultEntry(f"{tag}.log_fit_r2", r2, tolerance=0.99, status=PASS if r2 > 0.99 else FAIL))
        else:
            entries.append(within(f"{tag}.growth_exponent", sw["increment_exponent"], -2 * p + 1 + 2 / s, 0.10))
        for N, lamN, tr in zip(sw["N"], sw["lambda_N"], sw["trace"]):
            rows.append([p, int(N), lamN, tr, int(N) + 1])
    tail_p = P["tail_p"] or sd.critical_trace_exponent(s) + 1.0
    tail_N = [N for N in Ns if N < spec.n_eigs // 2]
    kappa = sd.tail_decay_exponent(spec, tail_p, tail_N)
    entries.append(within(f"tail_p={tail_p:g}.decay_exponent", kappa, -2 * tail_p + 1 + 2 / s, 0.10))
    entries.append(ResultEntry("lambda_growth", sd.lambda_growth(spec)))
    return entries, {"schatten": (["p", "N", "lambda_N", "trace", "count"], rows)}


def run_green(P: dict, seed: int):
    d, s = P["d"], P["s"]
    cfg = ts.TrapConfig(d, s, P["r_max"], P["n_grid"], P["n_grid"] - 1)
    with warnings.catch_warnings():
        # the kernel needs every eigenpair of the matrix, including those the box distorts
        warnings.simplefilter("ignore", ts.TruncationWarning)
        spec = ts.solve(cfg, cache=True)
    op = ts.assemble_operator(cfg)
    idx = np.linspace(P["n_grid"] // 100, int(0.75 * P["n_grid"]), 10).astype(int)
    eig = sd.halfline_kernel_eigensum(spec)[idx]
    solved = np.array([sd.halfline_kernel_solve(op, int(i)) for i in idx])
    err = float(np.max(np.abs(eig - solved) / solved))
    entries = [within("eigensum_vs_solve", err, 0.0, 1e-4, relative=False)]
    rows = [[spec.grid[i], e, v] for i, e, v in zip(idx, eig, solved)]
    lo, hi = sd.green_window(s, d)
    fine = ts.solve(ts.TrapConfig(d, s, P["r_max"], 2 * P["n_grid"], 1), vectors=False)
    for p in P["p"] or [lo + 0.5, 0.5 * (lo + min(hi, lo + 4))]:
        sd.check_green_exponent(p, s, d)
        a = sd.lp_norm(spec, sd.green_diagonal_exact(spec), p)
        b = sd.lp_norm(fine, sd.green_diagonal_exact(fine), p)
        entries.append(within(f"lp_norm_p={p:g}.grid_doubling_change", abs(b - a) / b, 0.0, P["stability_tol"], relative=False))
    try:
        sd.check_green_exponent(2.0 / s, s, d)
        rejected = False
    except ValueError:
        rejected = True
    entries.append(flag("rejects_p_equal_2_over_s", rejected))
    if d >= 2:
        for beta in P["beta"]:
            a = sd.origin_decay_check(spec, beta)
            b = sd.origin_decay_check(fine, beta)
            ok = math.isfinite(a) and abs(b - a) <= P["stability_tol"] * b
            entries.append(ResultEntry(f"origin_decay_beta={beta:g}", a, tolerance=P["stability_tol"], status=PASS if ok else FAIL))
    return entries, {"green": (["r", "eigensum", "linear_solve"], rows)}


def run_heatkernel(P: dict, seed: int):
    entries = []
    worst = 0.0
    for t in P["t"]:
        for r in P["r"]:
            for tau in P["r"]:
                a = bh.heat_kernel(bh.HeatKernelQuery(t, r, tau, 3))
                worst = max(worst, abs(a - bh.images_kernel(t, r, tau)) / bh.images_kernel(t, r, tau))
    entries.append(within("images_identity_d3", worst, 0.0, 1e-10, relative=False))
    sg = 0.0
    for d in (2, 3, 4):
        for t1, t2, r, tau in [(0.3, 0.7, 1.0, 2.0), (1.0, 0.5, 0.5, 0.8), (0.2, 0.2, 3.0, 2.5)]:
            sg = max(sg, bh.semigroup_defect(t1, t2, r, tau, d))
    entries.append(within("semigroup_defect", sg, 0.0, 1e-6, relative=False))
    rows = []
    gt_const = 1.0 / math.sqrt(4 * math.pi)
    t_grid = np.geomspace(0.05, 5.0, 12)
    for d, s in P["pairs"]:
        spec = ts.solve_below(d, s, 800.0, 4096, cache=True)
        rep = bh.golden_thompson_check(spec, t_grid)
        ok = bool(np.all(rep.truncation_ok)) and rep.bound <= gt_const
        entries.append(ResultEntry(f"golden_thompson_d={d}_s={s:g}", rep.bound, tolerance=gt_const, status=PASS if ok else FAIL))
        rows += [[d, s, t, tr, ra] for t, tr, ra in zip(rep.t, rep.trace, rep.ratio)]
    return entries, {"golden_thompson": (["d", "s", "t", "trace", "ratio"], rows)}


def run_sample(P: dict, seed: int):
    d, s = P["d"], P["s"]
    Ns = P["N"]
    spec = spectrum_for_modes(d, s, Ns[-1] + 1, P["n_grid"], vectors=False, extrapolate=True)
    entries = []
    top = Ns[-1]
    if s < 2:
        kappa = sd.trace_growth_exponent(spec, 1.0, top)
        entries.append(within("sigma_mass_growth_exponent", kappa, -1 + 2 / s, 0.10))
    n = P["n_samples"]
    w = np.concatenate([gf.wick_mass_values(g, spec.lambda_sq) for _, g in gf.iter_coefficient_batches(seed, n, top + 1)])
    mean, se = gf.mean_stderr(w)
    entries.append(ResultEntry("wick_mean", mean, se, WICK_SIGMAS, PASS if abs(mean) <= WICK_SIGMAS * se else FAIL))
    var_exact = gf.wick_variance(spec, top)
    dev = (w - mean) ** 2
    var_mc, var_se = float(np.mean(dev) * n / (n - 1)), float(np.std(dev, ddof=1) / math.sqrt(n))
    ok = abs(var_mc - var_exact) <= WICK_SIGMAS * var_se
    entries.append(ResultEntry("wick_variance", var_mc, var_se, WICK_SIGMAS, PASS if ok else FAIL))
    entries.append(ResultEntry("wick_variance_exact", var_exact))
    cr = gf.cauchy_rate_exponent(spec, Ns, n, seed)
    entries.append(within("cauchy_rate_exponent", cr["exponent"], cr["predicted"], 0.15))
    rows = [[N, math.sqrt(spec.lambda_sq[N]), gf.sigma_mass(spec, N), gf.wick_variance(spec, N)] for N in Ns]
    return entries, {"sample": (["N", "lambda_N", "sigma_mass", "wick_variance"], rows)}


# ------------------------------------------------------------ Gibbs sweeps


def expected_verdict(d: int, s: float, p: float) -> str | None:
    reg = gm.classify_regime(d, s, p).regime
    return {"subcritical": "bounded", "supercritical": "divergent"}.get(reg)


def verdict_status(verdict: str, expect: str | None) -> str:
    if verdict == "inconclusive":
        return INCONCLUSIVE
    if expect is None:
        return PASS
    return PASS if verdict == expect else FAIL


def _gibbs_spectrum(P: dict) -> ts.SpectralDecomposition:
    return spectrum_for_modes(P["d"], P["s"], max(P["N"]) + 1, P["n_grid"], vectors=True)


def _scan_rows(rep: gm.ScanReport, extra) -> list:
    rows = []
    for k, e in enumerate(rep.estimates):
        inc = rep.log_increments[k - 1] if k else float("nan")
        ise = rep.increment_stderr[k - 1] if k else float("nan")
        rows.append(list(extra) + [e.N, e.log_mean, e.log_stderr, inc, ise, e.max_single_sample_share, e.accept_rate])
    return rows


SCAN_HEADER = ["N", "log_Z", "log_Z_stderr", "log_increment", "increment_stderr", "max_sample_share", "accept_rate"]


def run_partition(P: dict, seed: int):
    spec = _gibbs_spectrum(P)
    params = gm.GibbsParams(P["d"], P["s"], P["p"], P["alpha"], P["K"], max(P["N"]), P["n_samples"])
    rep = gm.divergence_scan(spec, params, P["N"], seed)
    expect = P["expect"]
    if expect == "auto":
        expect = expected_verdict(P["d"], P["s"], P["p"])
    elif expect == "none":
        expect = None
    entries = [ResultEntry("verdict", rep.verdict, status=verdict_status(rep.verdict, expect))]
    for e in rep.estimates:
        entries.append(ResultEntry(f"log_Z_N={e.N}", e.log_mean, e.log_stderr))
    return entries, {"partition": (SCAN_HEADER, _scan_rows(rep, []))}


def _phase_cell(args):
    spec, P, p, seed = args
    params = gm.GibbsParams(P["d"], P["s"], p, P["alpha"], P["K"], max(P["N"]), P["n_samples"])
    return p, gm.divergence_scan(spec, params, P["N"], seed)


def run_phase(P: dict, seed: int):
    spec = _gibbs_spectrum(P)
    jobs = [(spec, P, p, seed) for p in P["p_grid"]]
    if P["workers"] > 1:
        with ProcessPoolExecutor(max_workers=P["workers"]) as pool:
            results = list(pool.map(_phase_cell, jobs))
    else:
        results = [_phase_cell(j) for j in jobs]
    entries, rows, scan_rows = [], [], []
    for p, rep in results:
        reg = gm.classify_regime(P["d"], P["s"], p)
        status = verdict_status(rep.verdict, expected_verdict(P["d"], P["s"], p))
        entries.append(ResultEntry(f"verdict_p={p:g}", rep.verdict, status=status))
        rows.append([p, reg.regime, reg.p_crit, rep.verdict, status])
        scan_rows += _scan_rows(rep, [p])
    return entries, {"phase": (["p", "regime", "p_crit", "verdict", "status"], rows), "phase_scans": (["p"] + SCAN_HEADER, scan_rows)}


# ----------------------------------------------------------- drift experiments


def run_drift_sub(P: dict, seed: int):
    spec = ts.solve_below(1, P["s"], P["top_energy"], P["n_grid"], vectors=True, extrapolate=True, cache=True)
    out = va.divergence_experiment_sub(
        spec, P["p"], P["alpha"], P["K"], P["M"], c=P["c"], J=P["J"], n_samples=P["n_samples"], seed=seed
    )
    entries = [
        within("entropy_exponent", out["entropy_exponent"], out["entropy_exponent_expected"], 0.10),
        ResultEntry("profile_exponent", out["profile_exponent"]),
        flag("strictly_decreasing", out["strictly_decreasing"]),
        flag("unbounded_below", out["unbounded"]),
        flag("cutoff_probability_at_least_half", out["cutoff_ok"]),
        flag("regularity_margin_nonnegative", min(r["min_regularity_margin"] for r in out["rows"]) >= -1e-9),
    ]
    keys = list(out["rows"][0].keys())
    return entries, {"drift_sub": (keys, [[r[k] for k in keys] for r in out["rows"]])}


def run_drift_super(P: dict, seed: int):
    spec = ts.solve_below(1, P["s"], P["top_energy"], P["n_grid"], vectors=True, extrapolate=True, cache=True)
    gs = va.ground_state(1, P["p"])
    K = P["K"] if P["K"] is not None else P["beta"] ** 2 * gs.mass + 1.5
    out = va.divergence_experiment_super(spec, gs, P["alpha"], K, P["beta"], P["rho"], c=P["c"], n_samples=P["n_samples"], seed=seed)
    entries = [
        within("A_exponent", out["A_exponent"], out["A_exponent_expected"], 0.10),
        within("D_exponent", out["D_exponent"], out["D_exponent_expected"], 0.10),
        flag("total_strictly_decreasing", out["strictly_decreasing"]),
        flag("B_within_bound", out["B_within_bound"]),
    ]
    keys = list(out["rows"][0].keys())
    return entries, {"drift_super": (keys, [[r[k] for k in keys] for r in out["rows"]])}


# ------------------------------------------------------------ semiclassical


def run_semiclassical(P: dict, seed: int):
    q = sc.PhaseSpaceQuery(P["s"], P["K"], P["E"])
    vol, en = sc.phase_space_volume(q), sc.classical_energy(q)
    entries = []
    if (P["s"], P["K"], P["E"]) == (2.0, 0.0, 1.0):
        entries.append(within("phase_space_volume", vol, math.pi, 1e-8, relative=False))
        entries.append(within("classical_energy", en, -0.25, 1e-8, relative=False))
    else:
        entries.append(within("phase_space_volume", vol, sc.phase_space_volume_2d(q), 1e-8, relative=False))
        entries.append(within("classical_energy", en, sc.classical_energy_2d(q), 1e-8, relative=False))
    hus = sc.husimi_identity_check(sc.husimi_surrogate(P["husimi_rank"], hbar=P["hbar"]), seed=seed)
    bounds_ok = hus["min_m"] >= -1e-3 and hus["max_m"] <= 1 + 1e-3
    entries.append(ResultEntry("husimi_range", [hus["min_m"], hus["max_m"]], tolerance=1e-3, status=PASS if bounds_ok else FAIL))
    entries.append(within("husimi_trace_identity", hus["trace_identity"], hus["rank"], 1e-3, relative=False))
    entries.append(within("husimi_resolution_of_identity", max(hus["resolution_errors"]), 0.0, 1e-3, relative=False))
    spec = ts.solve_below(1, P["s"], P["top_energy"], P["n_grid"], extrapolate=True, cache=True)
    ceil = sd.ceiling(spec)
    lams = P["Lambda"] or [ceil / 8, ceil / 4, ceil / 2, ceil]
    cmp = sc.hbar_trace_compare(spec, lams)
    top = cmp["rows"][-1]
    entries.append(within("hbar_count_constant", top["hbar_N"], cmp["prediction"], 0.03))
    rows = [[r["Lambda"], r["hbar"], r["count"], r["hbar_N"], r["prediction"]] for r in cmp["rows"]]
    return entries, {"hbar_count": (["Lambda", "hbar", "count", "hbar_N", "prediction"], rows)}


# --------------------------------------------------------------- fractional


def run_fractional(P: dict, seed: int):
    a, s = P["alpha"], P["s"]
    cfg = fr.FracConfig(a, s, P["R"], P["n_grid"], P["n_eigs"])
    spec = fr.solve_fractional(cfg)
    entries = []
    if a == 1:
        k = min(50, spec.n_valid)
        local = ts.solve(ts.TrapConfig.for_energy(1, s, 2 * spec.lambda_sq[k], 4096, k), vectors=False, extrapolate=True)
        err = float(np.max(np.abs(spec.lambda_sq[:k] - local.lambda_sq[:k]) / local.lambda_sq[:k]))
        entries.append(within("cross_module_spectrum", err, 0.0, 1e-3, relative=False))
    full = fr.solve_fractional(fr.FracConfig(a, s, P["R"], P["n_grid"], P["n_grid"] - 1), vectors=False)
    w = fr.frac_weyl_check(full)
    entries.append(within("weyl_exponent", w["exponent"], w["predicted"], 0.07))
    crit = fr.weyl_exponent(a, s)
    rows = []
    for g in P["gamma"] or [crit + 1.0, crit, crit - 0.5]:
        tc = fr.frac_trace_check(spec, g)
        tag = f"gamma={g:g}"
        if tc["regime"] == "log-critical":
            r2 = tc["log_linear_r2"]
            entries.append(ResultEntry(f"{tag}.log_fit_r2", r2, tolerance=0.99, status=PASS if r2 > 0.99 else FAIL))
        else:
            entries.append(within(f"{tag}.{tc['regime']}_increment_exponent", tc["increment_exponent"], tc["predicted_exponent"], 0.10))
        rows += [[g, tc["regime"], int(N), t] for N, t in zip(tc["N"], tc["trace"])]
    gt = fr.golden_thompson_ratio(spec, np.geomspace(0.05, 5.0, 12))
    entries.append(flag("golden_thompson_ratio_at_most_one", max(gt["ratio"]) <= 1.0, max(gt["ratio"])))
    if a > 0.5:
        edge = fr.green_window(a, s)
        G = fr.green_diagonal_exact(cfg)
        for p in P["green_p"] or [0.75 * edge, 1.5 * edge, 3.0 * edge]:
            gs = fr.green_shell_check(cfg, p, G)
            entries.append(flag(f"green_p={p:g}.verdict_matches_window", gs["verdict_matches"], "admissible" if gs["admissible"] else "inadmissible"))
    return entries, {"fractional_traces": (["gamma", "regime", "N", "trace"], rows)}
