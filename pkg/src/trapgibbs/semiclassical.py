"""Phase-space volumes, the classical energy, ħ-scaled eigenvalue counts and Husimi identities.

The classical region for energy E is {(x, p): p² + |x|^s <= E, |x| >= K}.
Coherent states are f_{x,p}(y) = ħ^{-1/4} f((y - x)/sqrt(ħ)) e^{ipy/ħ} for a
real odd window f with unit L² norm, and the Husimi function of a density
matrix γ is m(x, p) = ⟨f_{x,p}, γ f_{x,p}⟩.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import specdiag
from .trapspec import SpectralDecomposition, TrapConfig, solve

QUAD_TOL = 1e-13


@dataclass(frozen=True)
class PhaseSpaceQuery:
    s: float
    K: float = 0.0
    E: float = 1.0

    def __post_init__(self) -> None:
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.E <= 0:
            raise ValueError("E must be positive")

    @property
    def turning_point(self) -> float:
        return self.E ** (1.0 / self.s)


def _half_line(q: PhaseSpaceQuery, power: float) -> float:
    """∫_{x >= K} (E - x^s)_+^power dx."""
    hi = q.turning_point
    if q.K >= hi:
        return 0.0
    val, _ = integrate.quad(lambda x: (q.E - x**q.s) ** power, q.K, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    return val


def phase_space_volume(q: PhaseSpaceQuery) -> float:
    """|{p² + |x|^s <= E, |x| >= K}| = 2 ∫_{|x| >= K} (E - |x|^s)_+^{1/2} dx (both signs of x)."""
    return 4.0 * _half_line(q, 0.5)


def classical_energy(q: PhaseSpaceQuery) -> float:
    """-(2/3π) ∫_{|x| >= K} (E - |x|^s)_+^{3/2} dx."""
    return -(2.0 / (3.0 * math.pi)) * 2.0 * _half_line(q, 1.5)


def _region_integral(q: PhaseSpaceQuery, fn) -> float:
    """∬ fn(x, p) over the classical region with x >= K, p free, by nested quadrature."""
    hi = q.turning_point
    if q.K >= hi:
        return 0.0

    def pmax(x):
        return math.sqrt(max(q.E - x**q.s, 0.0))

    val, _ = integrate.dblquad(lambda p, x: fn(x, p), q.K, hi, lambda x: -pmax(x), pmax, epsabs=1e-12, epsrel=1e-12)
    return 2.0 * val  # x <= -K mirrors x >= K


def phase_space_volume_2d(q: PhaseSpaceQuery) -> float:
    return _region_integral(q, lambda x, p: 1.0)


def classical_energy_2d(q: PhaseSpaceQuery) -> float:
    """(1/2π) ∬ (p² + |x|^s - E)_- dx dp, the bathtub minimum."""
    return _region_integral(q, lambda x, p: p * p + x**q.s - q.E) / (2.0 * math.pi)


# ------------------------------------------------------------ trace scaling


def hbar_trace_compare(spec: SpectralDecomposition, Lambda_list) -> dict:
    """ħ N(L, Λ) with ħ = Λ^{-1/2-1/s} against (1/2π)|{p² + |x|^s <= 1}|.

    For d = 1 the limit is exactly that constant.  For the radial operators
    (d >= 2) only two-sided bounds are claimed; the ratio is reported.
    """
    cfg = spec.config
    ceil = specdiag.ceiling(spec)
    pred = phase_space_volume(PhaseSpaceQuery(cfg.s)) / (2.0 * math.pi)
    rows = []
    for Lam in sorted(float(x) for x in Lambda_list):
        if Lam > ceil:
            raise ValueError(f"Λ = {Lam:.6g} exceeds the spectral ceiling {ceil:.6g}")
        hbar = Lam ** (-0.5 - 1.0 / cfg.s)
        count = specdiag.counting_function(spec, Lam)
        rows.append({"Lambda": Lam, "hbar": hbar, "count": count, "hbar_N": hbar * count, "prediction": pred, "ratio": hbar * count / pred})
    return {"d": cfg.d, "s": cfg.s, "prediction": pred, "rows": rows}


# ----------------------------------------------------------------- Husimi


def odd_window(y: np.ndarray, k: int = 4) -> np.ndarray:
    """y (1 - y²)^k on |y| < 1, zero outside; unnormalized."""
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y) < 1, y * np.clip(1 - y * y, 0, None) ** k, 0.0)


@dataclass
class HusimiSurrogate:
    """Rank-r projector onto low eigenfunctions on a small full-line grid."""

    y: np.ndarray
    h: float
    states: np.ndarray  # shape (r, n), orthonormal in L²(dy)
    hbar: float

    @property
    def rank(self) -> int:
        return self.states.shape[0]


def husimi_surrogate(rank: int = 3, n_grid: int = 511, s: float = 2.0, hbar: float = 0.25) -> HusimiSurrogate:
    if not 0 <= rank <= 5:
        raise ValueError("surrogate rank must lie in [0, 5]")
    if n_grid > 512:
        raise ValueError("surrogate grid is capped at 512 points")
    cfg = TrapConfig(d=1, s=s, r_max=8.0, n_grid=n_grid, n_eigs=max(rank, 1))
    spec = solve(cfg)
    states = spec.eigfun[:rank] if rank else np.zeros((0, spec.grid.size))
    return HusimiSurrogate(y=spec.grid, h=spec.h, states=states, hbar=hbar)


def _coherent_overlaps(sur: HusimiSurrogate, funcs: np.ndarray, x_idx: np.ndarray) -> tuple[np.ndarray, float]:
    """⟨f_{x,p}, φ⟩ for each φ in funcs, x = y[x_idx], p on the DFT momentum grid.

    Returns an array (len(funcs), len(x_idx), n) and the momentum spacing.
    """
    y, h, hb = sur.y, sur.h, sur.hbar
    n = y.size
    norm = math.sqrt(float(np.sum(odd_window(y / math.sqrt(hb)) ** 2)) * h / math.sqrt(hb))
    out = np.empty((funcs.shape[0], x_idx.size, n), dtype=complex)
    for i, ix in enumerate(x_idx):
        win = hb**-0.25 * odd_window((y - y[ix]) / math.sqrt(hb)) / norm
        # ∫ conj(f_{x,p}(y)) φ(y) dy with p_k = 2πħ k / (n h); the grid offset y_0
        # contributes a phase common to every overlap at fixed p, which cancels
        out[:, i, :] = h * np.fft.fft(win * funcs, axis=1)
    dp = 2 * math.pi * hb / (n * h)
    return out, dp


def husimi_identity_check(sur: HusimiSurrogate, n_pairs: int = 5, seed: int = 0, n_sample: int = 10_000) -> dict:
    """0 <= m <= 1, (1/2πħ)∬ m = Tr γ and the resolution of identity on random pairs."""
    n = sur.y.size
    x_idx = np.arange(n)
    if sur.rank:
        ov, dp = _coherent_overlaps(sur, sur.states, x_idx)
        m = np.sum(np.abs(ov) ** 2, axis=0)
    else:
        dp = 2 * math.pi * sur.hbar / (n * sur.h)
        m = np.zeros((n, n))
    total = float(np.sum(m)) * sur.h * dp / (2 * math.pi * sur.hbar)
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, m.size, size=min(n_sample, m.size))
    sampled = m.ravel()[pick]
    # random pairs: smooth functions vanishing near the box edge
    env = np.exp(-(sur.y**2) / 4)
    errs = []
    for _ in range(n_pairs):
        c = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
        basis = np.array([env * np.cos(k * sur.y) for k in range(3)] + [env * np.sin(k * sur.y) for k in range(1, 4)])
        phi, psi = c @ basis
        exact = complex(np.sum(np.conj(phi) * psi) * sur.h)
        ov, _ = _coherent_overlaps(sur, np.array([phi, psi]), x_idx)
        recon = complex(np.sum(np.conj(ov[0]) * ov[1]) * sur.h * dp / (2 * math.pi * sur.hbar))
        errs.append(abs(recon - exact) / max(abs(exact), 1e-300))
    return {
        "rank": sur.rank,
        "min_m": float(m.min()),
        "max_m": float(m.max()),
        "sampled_max_m": float(sampled.max()),
        "trace_identity": total,
        "trace_error": abs(total - sur.rank),
        "resolution_errors": errs,
    }
