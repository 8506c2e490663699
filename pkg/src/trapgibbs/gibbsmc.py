"""Monte Carlo estimates of the truncated focusing partition function.

    Z_{K,N} = E[ 1{|M(u_N)| <= K} exp((alpha/p) ||u_N||_p^p) ]

with M the Wick-ordered mass for s <= 2 and the plain L² mass for s > 2.
Estimates are carried in log space; a single sample dominating the sum is
reported as a heavy tail rather than silently averaged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import gaussfield as gf
from .trapspec import SpectralDecomposition

REGIME_TOL = 1e-12
HEAVY_TAIL_SHARE = 0.5
NEAR_CRITICAL = 0.1


class Regime(NamedTuple):
    regime: str
    p_crit: float
    branch: str


def critical_power(d: int, s: float) -> float:
    if s > 2:
        return 2.0 + 4.0 / d
    return 2.0 + 4.0 * s / ((d - 1) * s + 2.0)


def classify_regime(d: int, s: float, p: float) -> Regime:
    """subcritical / critical / supercritical relative to p_crit(d, s)."""
    if s <= 1:
        raise ValueError("the subharmonic classification assumes s > 1")
    branch = "harmonic" if s == 2 else ("subharmonic" if s < 2 else "superharmonic")
    pc = critical_power(d, s)
    if abs(p - pc) <= REGIME_TOL:
        regime = "critical"
    else:
        regime = "subcritical" if p < pc else "supercritical"
    return Regime(regime, pc, branch)


@dataclass(frozen=True)
class GibbsParams:
    d: int
    s: float
    p: float
    alpha: float
    K: float
    N: int
    n_samples: int

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.K < 0:
            raise ValueError("alpha and K must be nonnegative")
        if self.s < 2 and self.p <= max(2.0, 4.0 / self.s):
            raise ValueError(f"p must exceed max(2, 4/s) = {max(2.0, 4.0 / self.s):.6g}")
        if self.d >= 3 and self.p >= 2 * self.d / (self.d - 2):
            raise ValueError(f"p must stay below 2d/(d-2) = {2 * self.d / (self.d - 2):.6g}")
        if self.n_samples < 2:
            raise ValueError("need at least two samples")

    @property
    def wick(self) -> bool:
        return self.s <= 2


@dataclass
class PartitionEstimate:
    mean: float
    stderr: float
    log_mean: float
    log_stderr: float
    max_single_sample_share: float
    heavy_tail_flag: bool
    accept_rate: float
    N: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _estimate_from_logs(logw: np.ndarray, N: int) -> PartitionEstimate:
    """logw holds log of each summand, -inf where the cutoff rejects the sample."""
    n = logw.size
    accepted = np.isfinite(logw)
    if not accepted.any():
        return PartitionEstimate(0.0, 0.0, -math.inf, math.inf, 0.0, False, 0.0, N)
    shift = float(np.max(logw[accepted]))
    w = np.where(accepted, np.exp(logw - shift), 0.0)
    total = float(np.sum(w))
    m = total / n
    sd = float(np.std(w, ddof=1)) / math.sqrt(n)
    log_mean = shift + math.log(m)
    share = 1.0 / total  # the largest summand is exp(0) = 1 after the shift
    mean = math.exp(log_mean) if log_mean < 700 else math.inf
    se = sd * math.exp(shift) if shift < 700 else math.inf
    return PartitionEstimate(
        mean=mean,
        stderr=se,
        log_mean=log_mean,
        log_stderr=sd / m,
        max_single_sample_share=share,
        heavy_tail_flag=share > HEAVY_TAIL_SHARE,
        accept_rate=float(accepted.mean()),
        N=N,
    )


def _mass_values(g: np.ndarray, lambda_sq: np.ndarray, wick: bool) -> np.ndarray:
    if wick:
        return gf.wick_mass_values(g, lambda_sq)
    return (np.abs(g) ** 2) @ (1.0 / lambda_sq[: g.shape[1]])


def log_weights(
    spec: SpectralDecomposition,
    params: GibbsParams,
    N_list,
    seed: int = 0,
    *,
    alphas=None,
) -> dict:
    """log summands per truncation level (and optionally per coupling) on shared samples.

    Returns {N: array} or {(N, alpha): array} when ``alphas`` is given.
    """
    Ns = sorted(int(N) for N in N_list)
    if Ns[-1] >= spec.n_eigs:
        raise ValueError(f"N = {Ns[-1]} exceeds the available modes ({spec.n_eigs - 1})")
    grids = {N: gf.field_grid(spec, N) for N in Ns}
    alist = [params.alpha] if alphas is None else list(alphas)
    chunks: dict = {(N, a): [] for N in Ns for a in alist}
    for _, g in gf.iter_coefficient_batches(seed, params.n_samples, Ns[-1] + 1):
        for N in Ns:
            gN = g[:, : N + 1]
            mass = _mass_values(gN, spec.lambda_sq, params.wick)
            keep = np.abs(mass) <= params.K
            pot = gf.lp_power_abs2(grids[N], gf.field_abs2(grids[N], gN), params.p) / params.p
            for a in alist:
                chunks[(N, a)].append(np.where(keep, a * pot, -np.inf))
    out = {key: np.concatenate(v) for key, v in chunks.items()}
    if alphas is None:
        return {N: out[(N, params.alpha)] for N in Ns}
    return out


def partition_estimate(spec: SpectralDecomposition, params: GibbsParams, seed: int = 0) -> PartitionEstimate:
    logw = log_weights(spec, params, [params.N], seed)[params.N]
    return _estimate_from_logs(logw, params.N)


def _paired_log_diff_se(la: np.ndarray, lb: np.ndarray) -> float:
    """Delta-method stderr of log mean(exp lb) - log mean(exp la) on paired samples."""
    if not (np.isfinite(la).any() and np.isfinite(lb).any()):
        return math.inf
    # each sample's weight relative to its own mean, x_i / mean(x), kept in log space
    ra = np.exp(la - _log_mean_exp(la))
    rb = np.exp(lb - _log_mean_exp(lb))
    return float(np.std(rb - ra, ddof=1) / math.sqrt(la.size))


def _log_mean_exp(x: np.ndarray) -> float:
    fin = np.isfinite(x)
    shift = float(np.max(x[fin]))
    return shift + math.log(float(np.sum(np.exp(x[fin] - shift))) / x.size)


@dataclass
class ScanReport:
    N: list
    estimates: list
    log_increments: list
    increment_stderr: list
    verdict: str
    threshold: float

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "estimates": [e.to_dict() for e in self.estimates],
            "log_increments": self.log_increments,
            "increment_stderr": self.increment_stderr,
            "verdict": self.verdict,
            "threshold": self.threshold,
        }


def _verdict(incs, ses, shares, k: float) -> str:
    grows = all(i > k * se for i, se in zip(incs, ses))
    tail_onset = shares[-1] > HEAVY_TAIL_SHARE
    if grows and tail_onset:
        return "divergent"
    if all(abs(i) <= k * se for i, se in zip(incs, ses)):
        return "bounded"
    return "inconclusive"


def _scan_from_logs(logs: dict, Ns: list, near_critical: bool) -> ScanReport:
    ests = [_estimate_from_logs(logs[N], N) for N in Ns]
    incs = [ests[k + 1].log_mean - ests[k].log_mean for k in range(len(Ns) - 1)]
    ses = [_paired_log_diff_se(logs[a], logs[b]) for a, b in zip(Ns, Ns[1:])]
    k = 5.0 if near_critical else 3.0
    shares = [e.max_single_sample_share for e in ests]
    return ScanReport(Ns, ests, incs, ses, _verdict(incs, ses, shares, k), k)


def divergence_scan(spec: SpectralDecomposition, params: GibbsParams, N_list, seed: int = 0) -> ScanReport:
    """Operational divergence verdict along a truncation sweep on shared samples.

    divergent: every doubling raises the log-estimate by more than k stderr and
    the largest-sample share grows (or exceeds 1/2); bounded: every increment
    stays within k stderr; otherwise inconclusive.  k = 3, or 5 within 0.1 of
    the critical power.
    """
    Ns = sorted(int(N) for N in N_list)
    pc = critical_power(params.d, params.s)
    logs = log_weights(spec, params, Ns, seed)
    return _scan_from_logs(logs, Ns, abs(params.p - pc) < NEAR_CRITICAL)


def critical_alpha_probe(spec: SpectralDecomposition, params: GibbsParams, alpha_grid, N_list, seed: int = 0) -> dict:
    """Verdicts per coupling at p = p_crit and the bracket [alpha_low, alpha_high]."""
    if not 1 < params.s < 2:
        raise ValueError("the critical coupling probe is defined for 1 < s < 2")
    pc = critical_power(params.d, params.s)
    if abs(params.p - pc) > 1e-9:
        raise ValueError(f"probe runs at p = p_crit = {pc:.6g}")
    Ns = sorted(int(N) for N in N_list)
    alphas = sorted(float(a) for a in alpha_grid)
    logs = log_weights(spec, params, Ns, seed, alphas=alphas)
    verdicts = {}
    for a in alphas:
        rep = _scan_from_logs({N: logs[(N, a)] for N in Ns}, Ns, near_critical=True)
        verdicts[a] = rep
    bounded = [a for a in alphas if verdicts[a].verdict == "bounded"]
    divergent = [a for a in alphas if verdicts[a].verdict == "divergent"]
    low = max((a for a in bounded if not divergent or a < min(divergent)), default=None)
    high = min((a for a in divergent if low is None or a > low), default=None)
    return {"verdicts": verdicts, "alpha_low": low, "alpha_high": high}
