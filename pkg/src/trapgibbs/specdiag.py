"""Spectral diagnostics: counting function, Weyl fits, Schatten traces, Green diagonal.

Traces are written Tr[L^{-p}] = sum_n λ_n^{-2p}; the convergence threshold is
p = 1/2 + 1/s.  The counting function grows like Λ^{1/2 + 1/s} and λ_N like
N^{s/(2+s)}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .trapspec import SpectralDecomposition, TridiagonalOperator, assemble_operator, radial_weight

REGIME_TOL = 1e-12


def critical_trace_exponent(s: float) -> float:
    return 0.5 + 1.0 / s


def weyl_exponent(s: float) -> float:
    return 0.5 + 1.0 / s


def ceiling(spec: SpectralDecomposition) -> float:
    """Largest Λ for which the computed spectrum counts all eigenvalues below Λ."""
    return min(spec.config.energy_ceiling, float(spec.lambda_sq[-1]))


def counting_function(spec: SpectralDecomposition, Lambda: float) -> int:
    """N(L, Λ) = #{λ_n² <= Λ}."""
    if Lambda > ceiling(spec):
        raise ValueError(f"Λ = {Lambda:.6g} exceeds the spectral ceiling {ceiling(spec):.6g}")
    return int(np.searchsorted(spec.lambda_sq, Lambda, side="right"))


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and rms residual of log y against log x."""
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


@dataclass
class WeylFit:
    exponent: float
    predicted: float
    intercept: float
    residual: float
    c_low: float
    c_high: float
    prefactor: float
    Lambda: np.ndarray
    counts: np.ndarray


def weyl_fit(spec: SpectralDecomposition, Lambda_range: tuple[float, float] | None = None, n_points: int = 80) -> WeylFit:
    """Slope of log N(L, Λ) against log Λ over a geometric Λ grid.

    Without an explicit range the fit uses the top 1.5 decades below the ceiling.
    ``c_low``/``c_high`` are min/max of N Λ^{-1/2-1/s} over the range; ``prefactor``
    is its mean over the upper half of the range.
    """
    top = ceiling(spec)
    lo, hi = Lambda_range if Lambda_range is not None else (top * 10**-1.5, top)
    if hi > top * (1 + 1e-12):
        raise ValueError(f"Λ range top {hi:.6g} exceeds the spectral ceiling {top:.6g}")
    if lo <= 0 or math.log10(hi / lo) < 1.5 - 1e-9:
        raise ValueError("Weyl fit needs a Λ range spanning at least 1.5 decades")
    lam = np.geomspace(lo, hi, n_points)
    counts = np.searchsorted(spec.lambda_sq, lam, side="right").astype(float)
    if np.any(counts == 0):
        raise ValueError("Λ range starts below the ground state")
    slope, icpt, resid = _loglog_fit(lam, counts)
    kappa = weyl_exponent(spec.config.s)
    scaled = counts * lam**-kappa
    return WeylFit(
        exponent=slope,
        predicted=kappa,
        intercept=icpt,
        residual=resid,
        c_low=float(scaled.min()),
        c_high=float(scaled.max()),
        prefactor=float(scaled[n_points // 2 :].mean()),
        Lambda=lam,
        counts=counts,
    )


def spectral_window_count(spec: SpectralDecomposition, Lambda: float, k0: float) -> int:
    """#{Λ < λ_n² <= k0 Λ}."""
    if k0 <= 1:
        raise ValueError("k0 must exceed 1")
    if k0 * Lambda > ceiling(spec):
        raise ValueError(f"k0 Λ = {k0 * Lambda:.6g} exceeds the spectral ceiling {ceiling(spec):.6g}")
    lsq = spec.lambda_sq
    return int(np.searchsorted(lsq, k0 * Lambda, side="right") - np.searchsorted(lsq, Lambda, side="right"))


def window_sweep(spec: SpectralDecomposition, k0: float, Lambdas) -> dict:
    """Window counts scaled by Λ^{-1/2-1/s} and their max/min spread."""
    kappa = weyl_exponent(spec.config.s)
    lam = np.asarray(Lambdas, dtype=float)
    counts = np.array([spectral_window_count(spec, L, k0) for L in lam], dtype=float)
    scaled = counts * lam**-kappa
    return {"Lambda": lam, "count": counts, "scaled": scaled, "spread": float(scaled.max() / scaled.min())}


# ------------------------------------------------------------------ traces


@dataclass
class TraceRegimeReport:
    p: float
    regime: str
    predicted_exponent: float
    fitted_exponent: float | None = None


def classify_trace(p: float, s: float) -> str:
    crit = critical_trace_exponent(s)
    if abs(p - crit) <= REGIME_TOL:
        return "log-critical"
    return "convergent" if p > crit else "polynomial"


def truncated_trace(spec: SpectralDecomposition, p: float, N: int, *, fit: bool = True) -> tuple[float, TraceRegimeReport]:
    """sum_{n <= N} λ_n^{-2p} and its regime; in the polynomial regime the growth exponent is fitted."""
    if not 0 <= N < spec.n_eigs:
        raise ValueError(f"N must lie in [0, {spec.n_eigs - 1}]")
    s = spec.config.s
    value = float(np.sum(spec.lambda_sq[: N + 1] ** -p))
    report = TraceRegimeReport(p=p, regime=classify_trace(p, s), predicted_exponent=-2 * p + 1 + 2 / s)
    if fit and report.regime == "polynomial" and N >= 64:
        report.fitted_exponent = trace_growth_exponent(spec, p, N)
    return value, report


def _doubling_levels(N: int, levels: int) -> np.ndarray:
    return np.array([N // 2**k for k in range(levels)][::-1])


def trace_growth_exponent(spec: SpectralDecomposition, p: float, N: int, levels: int = 5) -> float:
    """Exponent γ in Tr[L_N^{-p}] ≈ a + b λ_N^γ, from increments over successive doublings."""
    Ns = _doubling_levels(N, levels + 1)
    partial = np.cumsum(spec.lambda_sq ** -p)
    inc = np.diff(partial[Ns])
    lam = np.sqrt(spec.lambda_sq[Ns[1:]])
    return _loglog_fit(lam, inc)[0]


def trace_sweep(spec: SpectralDecomposition, p: float, N_list) -> dict:
    """Truncated traces along N_list with the diagnostics appropriate to the regime."""
    Ns = np.asarray(N_list, dtype=int)
    partial = np.cumsum(spec.lambda_sq ** -p)
    vals = partial[Ns]
    lamN = np.sqrt(spec.lambda_sq[Ns])
    out = {"N": Ns, "lambda_N": lamN, "trace": vals, "regime": classify_trace(p, spec.config.s)}
    out["doubling_change"] = np.abs(np.diff(vals))
    L = np.log(lamN)
    A = np.vstack([L**2, L, np.ones_like(L)]).T
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    fitted = A @ coef
    ss_res = float(np.sum((vals - fitted) ** 2))
    ss_tot = float(np.sum((vals - vals.mean()) ** 2))
    out["log_quadratic_coef"] = coef
    out["log_quadratic_r2"] = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if len(Ns) >= 3:
        out["increment_exponent"] = _loglog_fit(lamN[1:], np.diff(vals))[0]
    return out


def _eigen_law(spec: SpectralDecomposition) -> tuple[float, float]:
    """Fit log λ_n² = a + b log(n + 1/2) on the upper half of the valid spectrum."""
    lsq = spec.lambda_sq
    valid = lsq <= spec.config.energy_ceiling
    n = np.arange(lsq.size)[valid]
    half = n[n.size // 2 :]
    b, a, _ = _loglog_fit(half + 0.5, lsq[half])
    return a, b


def spectral_remainder(spec: SpectralDecomposition, p: float, n_top: int | None = None) -> float:
    """sum_{n > n_top} λ_n^{-2p} from the fitted power law λ_n² = e^a (n + 1/2)^b.

    Midpoint rule: sum_{n > n_top} f(n) ≈ ∫_{n_top + 1/2}^inf f.
    """
    if p <= critical_trace_exponent(spec.config.s) + REGIME_TOL:
        raise ValueError("the spectral remainder is infinite for p <= 1/2 + 1/s")
    a, b = _eigen_law(spec)
    if n_top is None:
        n_top = int(np.sum(spec.lambda_sq <= spec.config.energy_ceiling)) - 1
    m = n_top + 1.0  # (n_top + 1/2) + 1/2
    return math.exp(-a * p) * m ** (1 - b * p) / (b * p - 1)


def full_trace(spec: SpectralDecomposition, p: float) -> float:
    """Tr[L^{-p}]: computed eigenvalues up to the ceiling plus the analytic remainder."""
    n_top = int(np.sum(spec.lambda_sq <= spec.config.energy_ceiling)) - 1
    return float(np.sum(spec.lambda_sq[: n_top + 1] ** -p)) + spectral_remainder(spec, p, n_top)


def tail_trace(spec: SpectralDecomposition, p: float, N: int) -> float:
    """sum_{n > N} λ_n^{-2p}: computed part plus remainder beyond the spectrum."""
    if p <= critical_trace_exponent(spec.config.s) + REGIME_TOL:
        raise ValueError(f"tail trace diverges for p = {p} <= 1/2 + 1/s")
    n_top = int(np.sum(spec.lambda_sq <= spec.config.energy_ceiling)) - 1
    if N >= n_top:
        raise ValueError("N must lie below the last valid eigenvalue")
    return float(np.sum(spec.lambda_sq[N + 1 : n_top + 1] ** -p)) + spectral_remainder(spec, p, n_top)


def tail_decay_exponent(spec: SpectralDecomposition, p: float, N_list) -> float:
    """Slope of log tail(N) against log λ_N."""
    Ns = np.asarray(N_list, dtype=int)
    tails = np.array([tail_trace(spec, p, int(N)) for N in Ns])
    return _loglog_fit(np.sqrt(spec.lambda_sq[Ns]), tails)[0]


def lambda_growth(spec: SpectralDecomposition) -> float:
    """Slope of log λ_N against log N over the upper half of the valid spectrum."""
    valid = spec.lambda_sq <= spec.config.energy_ceiling
    n = np.arange(spec.lambda_sq.size)[valid]
    half = n[n.size // 2 :]
    return _loglog_fit(half + 1.0, np.sqrt(spec.lambda_sq[half]))[0]


# ------------------------------------------------------------ Green function


def green_window(s: float, d: int) -> tuple[float, float]:
    """Open interval of admissible p for the Green diagonal in L^p(R^d)."""
    lo = max(1.0, 2.0 / s)
    hi = d / (d - 2) if d >= 3 else math.inf
    return lo, hi


def check_green_exponent(p: float, s: float, d: int) -> None:
    lo, hi = green_window(s, d)
    if p <= lo:
        which = "1" if lo == 1.0 else f"2/s = {2.0 / s:.6g}"
        raise ValueError(f"p = {p:.6g} violates the lower bound p > max(1, 2/s); binding term is {which}")
    if p >= hi and not (math.isinf(p) and math.isinf(hi)):
        raise ValueError(f"p = {p:.6g} violates the upper bound p < d/(d-2) = {hi:.6g}")


def halfline_kernel_eigensum(spec: SpectralDecomposition, N: int | None = None) -> np.ndarray:
    """sum_{n <= N} g_n(r)² / λ_n² on the grid, with the matrix eigenvalues."""
    if not spec.has_vectors:
        raise ValueError("decomposition was computed without eigenvectors")
    k = spec.n_eigs if N is None else N + 1
    g = spec.eigfun[:k]
    return np.einsum("nr,n->r", g * g, 1.0 / spec.lambda_sq_grid[:k])


def halfline_kernel_exact(op: TridiagonalOperator) -> np.ndarray:
    """Diagonal of the inverse matrix divided by h, the discrete kernel L^{-1}(r, r).

    Uses forward and backward pivots of the LDL factorizations:
    (T^{-1})_ii = 1 / (f_i + b_i - a_i).
    """
    a, off = op.diag, op.offdiag
    n = a.size
    fwd = np.empty(n)
    bwd = np.empty(n)
    fwd[0] = a[0]
    for i in range(1, n):
        fwd[i] = a[i] - off[i - 1] ** 2 / fwd[i - 1]
    bwd[-1] = a[-1]
    for i in range(n - 2, -1, -1):
        bwd[i] = a[i] - off[i] ** 2 / bwd[i + 1]
    return 1.0 / ((fwd + bwd - a) * op.h)


def halfline_kernel_solve(op: TridiagonalOperator, index: int) -> float:
    """L^{-1}(r_i, r_i) from one banded solve against a grid delta at node i."""
    n = op.size
    ab = np.zeros((3, n))
    ab[0, 1:] = op.offdiag
    ab[1] = op.diag
    ab[2, :-1] = op.offdiag
    rhs = np.zeros(n)
    rhs[index] = 1.0 / op.h
    return float(solve_banded((1, 1), ab, rhs)[index])


def _to_space(spec: SpectralDecomposition, kernel: np.ndarray) -> np.ndarray:
    cfg = spec.config
    if cfg.d == 1:
        return kernel
    return kernel * spec.grid ** (1 - cfg.d) / cfg.sphere_area


def green_diagonal(spec: SpectralDecomposition, r=None, N: int | None = None):
    """G(r, r) = sum_n e_n(r)² / λ_n² in R^d, on the grid or interpolated at ``r``."""
    diag = _to_space(spec, halfline_kernel_eigensum(spec, N))
    if r is None:
        return diag
    return np.interp(r, spec.grid, diag)


def green_diagonal_exact(spec: SpectralDecomposition) -> np.ndarray:
    """Green diagonal of the full discrete operator (all eigenpairs)."""
    return _to_space(spec, halfline_kernel_exact(assemble_operator(spec.config)))


def green_remainder(spec: SpectralDecomposition, N: int | None = None) -> np.ndarray:
    """Missing mass of the truncated eigen-sum relative to the full discrete operator."""
    return green_diagonal_exact(spec) - green_diagonal(spec, N=N)


def lp_norm(spec: SpectralDecomposition, values: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(values)))
    w = radial_weight(spec)
    return float(np.sum(np.abs(values) ** p * w) ** (1.0 / p))


def green_lp_norm(spec: SpectralDecomposition, p: float, N: int | None = None, *, exact: bool = False) -> float:
    """||G(x, x)||_{L^p(R^d)} with the admissibility window enforced."""
    check_green_exponent(p, spec.config.s, spec.config.d)
    diag = green_diagonal_exact(spec) if exact else green_diagonal(spec, N=N)
    return lp_norm(spec, diag, p)


def origin_decay_check(spec: SpectralDecomposition, beta: float) -> float:
    """sup over r in (0, 1] of r^{-β} L^{-1}(r, r) for the half-line kernel.

    beta = 0 gives the plain sup; beta must stay below 1.
    """
    if spec.config.d < 2:
        raise ValueError("origin decay is a half-line statement; needs d >= 2")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    kern = halfline_kernel_exact(assemble_operator(spec.config))
    mask = spec.grid <= 1.0
    return float(np.max(spec.grid[mask] ** -beta * kern[mask]))


# ------------------------------------------------------ functional inequalities


def hardy_slack(r: np.ndarray, f: np.ndarray) -> float:
    """∫ f'² dr - ∫ f²/(4 r²) dr for f vanishing at both ends of the grid."""
    h = r[1] - r[0]
    fp = np.gradient(f, h)
    pos = r > 0  # the weight 1/r² is only defined away from the origin
    return float(np.trapezoid(fp[pos] ** 2, r[pos]) - np.trapezoid(f[pos] ** 2 / (4 * r[pos] ** 2), r[pos]))


def functional_inequality_check(r: np.ndarray, functions, *, p: float | None = None, d: int = 1, c_gns: float | None = None) -> dict:
    """Hardy and (optionally) GNS slacks for each radial test function on grid ``r``."""
    from .variational import gns_quotient

    out = {"hardy": np.array([hardy_slack(r, f) for f in functions])}
    if p is not None and c_gns is not None:
        out["gns"] = np.array([c_gns - gns_quotient(r, f, p, d) for f in functions])
    return out
