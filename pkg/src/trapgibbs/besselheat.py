"""Modified Bessel function I_nu, the inverse-square heat kernel, and trace ratios.

The heat kernel of -d²/dr² + (nu² - 1/4)/r² on (0, inf) with nu = (d-2)/2 is

    G(t, r, tau) = sqrt(r tau)/(2t) * exp(-(r² + tau²)/(4t)) * I_nu(r tau/(2t)),

evaluated here in log space through the exponentially scaled Bessel function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .trapspec import SpectralDecomposition

SERIES_CROSSOVER = 30.0
OVERFLOW_X = 700.0


class LogValue(NamedTuple):
    log: float
    sign: float


def _log_series(nu: float, x: float) -> float:
    """log I_nu(x) from the ascending series, summed with a running term ratio."""
    half = 0.5 * x
    log_first = nu * math.log(half) - math.lgamma(nu + 1.0)
    q = half * half
    total, term, k = 1.0, 1.0, 0
    while True:
        k += 1
        term *= q / (k * (k + nu))
        total += term
        if term < 1e-17 * total:
            break
    return log_first + math.log(total)


def _scaled_asymptotic(nu: float, x: float) -> float:
    """e^{-x} I_nu(x) sqrt(2 pi x) from the Hankel expansion, truncated at its smallest term."""
    mu = 4.0 * nu * nu
    total, term, best = 1.0, 1.0, 1.0
    for k in range(1, 200):
        term *= -(mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(term) > best and (2 * k - 1) ** 2 > mu:
            break
        best = abs(term)
        total += term
        if best < 1e-17 * abs(total):
            break
    return total


def log_bessel_i(nu: float, x: float) -> LogValue:
    """(log |I_nu(x)|, sign) for nu >= 0 and x >= 0."""
    if nu < 0 or x < 0:
        raise ValueError("bessel_i needs nu >= 0 and x >= 0")
    if x == 0.0:
        return LogValue(0.0 if nu == 0 else -math.inf, 1.0)
    # the Hankel expansion needs x well beyond nu²; below that the series is used
    if x < max(SERIES_CROSSOVER, 2.0 * nu * nu):
        return LogValue(_log_series(nu, x), 1.0)
    return LogValue(x - 0.5 * math.log(2 * math.pi * x) + math.log(_scaled_asymptotic(nu, x)), 1.0)


def bessel_i(nu: float, x: float) -> float | LogValue:
    """I_nu(x) to about 14 digits.

    Power series below x = 30, Hankel asymptotics above.  Past x = 700 the
    value overflows double precision and a LogValue (log, sign) is returned.
    """
    lv = log_bessel_i(nu, x)
    if x > OVERFLOW_X:
        return lv
    return lv.sign * math.exp(lv.log)


def log_bessel_ie(nu: float, x: float) -> float:
    """log(e^{-x} I_nu(x))."""
    return log_bessel_i(nu, x).log - x


@dataclass(frozen=True)
class HeatKernelQuery:
    t: float
    r: float
    tau: float
    d: int

    def __post_init__(self) -> None:
        vals = (self.t, self.r, self.tau)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError("t, r, tau must be positive and finite")
        if self.d < 2:
            raise ValueError("the inverse-square heat kernel needs d >= 2")

    @property
    def nu(self) -> float:
        return (self.d - 2) / 2.0


def log_heat_kernel(q: HeatKernelQuery) -> float:
    z = q.r * q.tau / (2 * q.t)
    # exp(-(r²+tau²)/4t) I_nu(z) = exp(-(r-tau)²/4t) * e^{-z} I_nu(z)
    return (
        0.5 * math.log(q.r * q.tau)
        - math.log(2 * q.t)
        - (q.r - q.tau) ** 2 / (4 * q.t)
        + log_bessel_ie(q.nu, z)
    )


def heat_kernel(q: HeatKernelQuery) -> float:
    return math.exp(log_heat_kernel(q))


def heat_kernel_grid(t: float, r: np.ndarray, tau: np.ndarray, d: int) -> np.ndarray:
    """Vectorized G(t, r_i, tau_j) on an outer grid."""
    r = np.asarray(r, dtype=float)
    tau = np.asarray(tau, dtype=float)
    out = np.empty((r.size, tau.size))
    for i, ri in enumerate(r):
        for j, tj in enumerate(tau):
            out[i, j] = heat_kernel(HeatKernelQuery(t, ri, tj, d))
    return out


def images_kernel(t: float, r: float, tau: float) -> float:
    """d = 3 closed form (4 pi t)^{-1/2} [e^{-(r-tau)²/4t} - e^{-(r+tau)²/4t}]."""
    return (math.exp(-((r - tau) ** 2) / (4 * t)) * -math.expm1(-r * tau / t)) / math.sqrt(4 * math.pi * t)


def semigroup_defect(t: float, s: float, r: float, tau: float, d: int) -> float:
    """Relative defect of ∫ G(t,r,σ) G(s,σ,τ) dσ = G(t+s,r,τ)."""
    from scipy.integrate import quad

    def integrand(sig: float) -> float:
        return math.exp(
            log_heat_kernel(HeatKernelQuery(t, r, sig, d)) + log_heat_kernel(HeatKernelQuery(s, sig, tau, d))
        )

    # the integrand is concentrated near the segment between r and tau
    width = 12.0 * math.sqrt(t + s)
    lo, hi = max(min(r, tau) - width, 0.0), max(r, tau) + width
    pts = sorted({r, tau})
    val = quad(integrand, lo, hi, points=pts, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    val += quad(integrand, hi, math.inf, epsabs=0.0, epsrel=1e-10)[0]
    exact = heat_kernel(HeatKernelQuery(t + s, r, tau, d))
    return abs(val - exact) / exact


def diagonal_bound_constant(d: int, r_grid: np.ndarray, t_grid: np.ndarray) -> float:
    """Smallest C with G(t,r,r) <= C t^{-1/2} over the sampled grid."""
    best = 0.0
    for t in t_grid:
        for r in r_grid:
            best = max(best, heat_kernel(HeatKernelQuery(t, r, r, d)) * math.sqrt(t))
    return best


# ------------------------------------------------------------ trace ratios


def potential_integral(s: float, t: float, d: int = 2) -> float:
    """∫ e^{-t V} over the operator's domain: (0, inf) for d >= 2, R for d = 1."""
    half = math.gamma(1.0 + 1.0 / s) * t ** (-1.0 / s)
    return 2.0 * half if d == 1 else half


@dataclass
class GoldenThompsonReport:
    t: np.ndarray
    trace: np.ndarray
    ratio: np.ndarray
    truncation_ok: np.ndarray

    @property
    def bound(self) -> float:
        return float(np.max(self.ratio))


def heat_trace(spec: SpectralDecomposition, t: float) -> float:
    lam = spec.lambda_sq
    return float(np.sum(np.exp(-t * (lam - lam[0]))) * math.exp(-t * lam[0]))


def golden_thompson_check(spec: SpectralDecomposition, t_grid) -> GoldenThompsonReport:
    """Ratios Tr[e^{-tL}] / (t^{-1/2} ∫ e^{-tV})."""
    t_arr = np.asarray(t_grid, dtype=float)
    lam = spec.lambda_sq
    tr = np.array([heat_trace(spec, t) for t in t_arr])
    denom = np.array([t**-0.5 * potential_integral(spec.config.s, t, spec.config.d) for t in t_arr])
    ok = np.exp(-t_arr * lam[-1]) < 1e-12
    return GoldenThompsonReport(t=t_arr, trace=tr, ratio=tr / denom, truncation_ok=ok)


def lieb_thirring_denominator(s: float, alpha: float, ground: float, d: int = 2) -> float:
    """∫_0^inf (r^s + λ_0²)^{1/2 - alpha} dr (doubled for the full line when d = 1)."""
    from scipy.integrate import quad

    expo = 0.5 - alpha
    val = quad(lambda r: (r**s + ground) ** expo, 0.0, math.inf, epsabs=0.0, epsrel=1e-11, limit=400)[0]
    return 2.0 * val if d == 1 else val


def lieb_thirring_check(spec: SpectralDecomposition, alpha: float) -> dict:
    """Tr[L^{-alpha}] with its spectral tail, divided by the potential integral."""
    from .specdiag import critical_trace_exponent, full_trace

    crit = critical_trace_exponent(spec.config.s)
    if abs(alpha - crit) <= 1e-12:
        raise ValueError(
            f"alpha = 1/2 + 1/s = {crit:.6g} is the critical exponent, trace diverges logarithmically"
        )
    if alpha < crit:
        raise ValueError(
            f"alpha = {alpha:.6g} < 1/2 + 1/s = {crit:.6g}: Tr[L^-alpha] diverges polynomially"
        )
    trace = full_trace(spec, alpha)
    denom = lieb_thirring_denominator(spec.config.s, alpha, float(spec.lambda_sq[0]), spec.config.d)
    return {"trace": trace, "denominator": denom, "ratio": trace / denom}
