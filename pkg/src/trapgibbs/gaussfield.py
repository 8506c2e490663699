"""Gaussian field u_N = sum_{n <= N} g_n e_n / λ_n in the eigenbasis of the trap.

Coefficients g_n are independent complex Gaussians with unit-variance real and
imaginary parts, so E|g_n|² = 2.  They are drawn from counter-based streams:
the value for (sample i, mode n) depends only on (seed, i, n), which makes
samples reproducible, independent of the truncation N, and independent of how
a batch is split between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trapspec import SpectralDecomposition, radial_weight

SAMPLE_BLOCK = 1024
MODE_BLOCK = 64
AMPLITUDE_CUT = 1e-7


def _block(seed: int, sample_block: int, mode_block: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(sample_block, mode_block))
    rng = np.random.Generator(np.random.Philox(ss))
    z = rng.standard_normal((SAMPLE_BLOCK, MODE_BLOCK, 2))
    return z[..., 0] + 1j * z[..., 1]


def coefficients(seed: int, start: int, count: int, n_modes: int) -> np.ndarray:
    """Complex Gaussian coefficients for samples start..start+count-1 and modes 0..n_modes-1."""
    out = np.empty((count, n_modes), dtype=complex)
    stop = start + count
    for sb in range(start // SAMPLE_BLOCK, (stop - 1) // SAMPLE_BLOCK + 1):
        lo, hi = max(start, sb * SAMPLE_BLOCK), min(stop, (sb + 1) * SAMPLE_BLOCK)
        for mb in range((n_modes - 1) // MODE_BLOCK + 1):
            mlo, mhi = mb * MODE_BLOCK, min(n_modes, (mb + 1) * MODE_BLOCK)
            blk = _block(seed, sb, mb)
            out[lo - start : hi - start, mlo:mhi] = blk[lo - sb * SAMPLE_BLOCK : hi - sb * SAMPLE_BLOCK, : mhi - mlo]
    return out


def iter_coefficient_batches(seed: int, n_samples: int, n_modes: int, batch: int = 4 * SAMPLE_BLOCK):
    for start in range(0, n_samples, batch):
        yield start, coefficients(seed, start, min(batch, n_samples - start), n_modes)


# ------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class FieldGrid:
    """Subsampled grid and basis used to evaluate fields cheaply."""

    x: np.ndarray
    weight: np.ndarray  # quadrature weight for integrals over R^d
    basis: np.ndarray  # e_n(x) / λ_n, shape (N + 1, n_points)
    basis_sq: np.ndarray  # e_n(x)², shape (N + 1, n_points)


def spatial_eigenfunctions(spec: SpectralDecomposition, N: int) -> np.ndarray:
    """e_n on the spec grid for n <= N (g_n itself when d = 1)."""
    if not spec.has_vectors:
        raise ValueError("decomposition was computed without eigenvectors")
    if N >= spec.n_eigs:
        raise ValueError(f"N = {N} exceeds the available modes ({spec.n_eigs - 1})")
    g = spec.eigfun[: N + 1]
    if spec.config.d == 1:
        return g
    return g * spec.grid ** (-(spec.config.d - 1) / 2.0) / math.sqrt(spec.config.sphere_area)


def field_grid(spec: SpectralDecomposition, N: int, points_per_wavelength: float = 12.0) -> FieldGrid:
    """Evaluation grid resolving the top mode with a cut at negligible amplitude."""
    e = spatial_eigenfunctions(spec, N)
    lam_top = math.sqrt(spec.lambda_sq[N])
    # local wavelength is shortest where the potential vanishes: 2π/λ_N
    stride = max(1, int((2 * math.pi / lam_top) / points_per_wavelength / spec.h))
    amp = np.max(np.abs(e), axis=0)
    keep = np.nonzero(amp > AMPLITUDE_CUT * amp.max())[0]
    lo, hi = keep[0], keep[-1] + 1
    idx = np.arange(lo, hi, stride)
    w = radial_weight(spec)[idx] * stride
    basis = e[:, idx] / np.sqrt(spec.lambda_sq[: N + 1])[:, None]
    return FieldGrid(x=spec.grid[idx], weight=w, basis=basis, basis_sq=e[:, idx] ** 2)


def field_values(fg: FieldGrid, g: np.ndarray) -> np.ndarray:
    """u_N on the evaluation grid for a batch of coefficient rows (complex)."""
    n = fg.basis.shape[0]
    g = np.atleast_2d(g)[:, :n]
    return (np.ascontiguousarray(g.real) @ fg.basis) + 1j * (np.ascontiguousarray(g.imag) @ fg.basis)


def field_abs2(fg: FieldGrid, g: np.ndarray) -> np.ndarray:
    """|u_N|² on the evaluation grid for a batch of coefficient rows."""
    n = fg.basis.shape[0]
    g = np.atleast_2d(g)[:, :n]
    # contiguous copies keep the products on the BLAS fast path
    re = np.ascontiguousarray(g.real) @ fg.basis
    im = np.ascontiguousarray(g.imag) @ fg.basis
    re *= re
    im *= im
    re += im
    return re


def _power_half(abs2: np.ndarray, p: float) -> np.ndarray:
    half = p / 2.0
    if half == int(half) and 1 <= half <= 6:
        out = abs2.copy()
        for _ in range(int(half) - 1):
            out *= abs2
        return out
    return abs2**half


def lp_power(fg: FieldGrid, u: np.ndarray, p: float) -> np.ndarray:
    """∫ |u|^p dx for each row of complex field values."""
    return _power_half(u.real**2 + u.imag**2, p) @ fg.weight


def lp_power_abs2(fg: FieldGrid, abs2: np.ndarray, p: float) -> np.ndarray:
    """∫ |u|^p dx from precomputed |u|²."""
    return _power_half(abs2, p) @ fg.weight


@dataclass
class FieldSample:
    spec: SpectralDecomposition
    N: int
    g: np.ndarray
    seed: int
    index: int
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        """u_N on the full spec grid."""
        if self._values is None:
            e = spatial_eigenfunctions(self.spec, self.N)
            coef = self.g / np.sqrt(self.spec.lambda_sq[: self.N + 1])
            self._values = coef @ e
        return self._values

    def lp_norm(self, p: float) -> float:
        w = radial_weight(self.spec)
        return float(np.sum(np.abs(self.values) ** p * w) ** (1.0 / p))

    def mass(self) -> float:
        return float(np.sum(np.abs(self.g) ** 2 / self.spec.lambda_sq[: self.N + 1]))


def sample_field(spec: SpectralDecomposition, N: int, seed: int, index: int = 0) -> FieldSample:
    if N >= spec.n_eigs:
        raise ValueError(f"N = {N} exceeds the available modes ({spec.n_eigs - 1})")
    g = coefficients(seed, index, 1, N + 1)[0]
    return FieldSample(spec=spec, N=N, g=g, seed=seed, index=index)


# --------------------------------------------------------- variance and Wick


def sigma_N(spec: SpectralDecomposition, N: int, r=None):
    """σ_N(r) = E|u_N(r)|² = 2 sum_{n<=N} e_n(r)²/λ_n²."""
    e = spatial_eigenfunctions(spec, N)
    sig = 2.0 * (e**2).T @ (1.0 / spec.lambda_sq[: N + 1])
    return sig if r is None else np.interp(r, spec.grid, sig)


def sigma_mass(spec: SpectralDecomposition, N: int) -> float:
    """∫ σ_N = 2 sum_{n<=N} λ_n^{-2}."""
    return 2.0 * float(np.sum(1.0 / spec.lambda_sq[: N + 1]))


@dataclass(frozen=True)
class WickMass:
    value: float


def wick_mass_values(g: np.ndarray, lambda_sq: np.ndarray) -> np.ndarray:
    """sum_n (|g_n|² - 2)/λ_n² for each coefficient row."""
    g = np.atleast_2d(g)
    return (np.abs(g) ** 2 - 2.0) @ (1.0 / lambda_sq[: g.shape[1]])


def wick_mass(sample: FieldSample) -> WickMass:
    return WickMass(float(wick_mass_values(sample.g, sample.spec.lambda_sq)[0]))


def wick_variance(spec: SpectralDecomposition, N: int, start: int = 0) -> float:
    """Var of the Wick mass over modes start..N: 4 sum λ_n^{-4}."""
    return 4.0 * float(np.sum(spec.lambda_sq[start : N + 1] ** -2.0))


def mean_stderr(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


# ------------------------------------------------------------ moment report


def check_moment_window(p: float, s: float, d: int, delta: float | None = None) -> None:
    lo = max(2.0, 4.0 / s)
    if p <= lo:
        raise ValueError(f"p = {p:.6g} must exceed max(2, 4/s) = {lo:.6g} for uniform L^p moments")
    if d >= 3 and p >= 2 * d / (d - 2):
        raise ValueError(f"p = {p:.6g} must stay below 2d/(d-2) = {2 * d / (d - 2):.6g}")
    if delta is not None and delta <= -0.5 + 1.0 / s:
        raise ValueError(f"delta = {delta:.6g} must exceed -1/2 + 1/s = {-0.5 + 1.0 / s:.6g}")


def moment_report(
    spec: SpectralDecomposition,
    N_list,
    p: float,
    q: float,
    n_samples: int,
    *,
    delta: float | None = None,
    seed: int = 0,
) -> dict:
    """Monte Carlo moments of ||u_N||_p^q, ||u_N||_{H^-delta}^q and the Wick mass along N_list.

    Differences are taken between consecutive entries of N_list on the same
    samples, so they estimate the Cauchy rates in N.
    """
    s, d = spec.config.s, spec.config.d
    check_moment_window(p, s, d, delta)
    Ns = sorted(int(N) for N in N_list)
    top = Ns[-1]
    grids = {N: field_grid(spec, N) for N in Ns}
    lp = {N: [] for N in Ns}
    wick = {N: [] for N in Ns}
    sob = {N: [] for N in Ns}
    for _, g in iter_coefficient_batches(seed, n_samples, top + 1):
        absg2 = np.abs(g) ** 2
        for N in Ns:
            a2 = field_abs2(grids[N], g[:, : N + 1])
            lp[N].append(lp_power_abs2(grids[N], a2, p) ** (q / p))
            wick[N].append((absg2[:, : N + 1] - 2.0) @ (1.0 / spec.lambda_sq[: N + 1]))
            if delta is not None:
                w = spec.lambda_sq[: N + 1] ** (-(1.0 + delta))
                sob[N].append((absg2[:, : N + 1] @ w) ** (q / 2))
    out: dict = {"N": Ns, "lambda_N": [math.sqrt(spec.lambda_sq[N]) for N in Ns]}
    out["lp_moment"] = [mean_stderr(np.concatenate(lp[N])) for N in Ns]
    wk = {N: np.concatenate(wick[N]) for N in Ns}
    out["wick_moment"] = [mean_stderr(np.abs(wk[N]) ** q) for N in Ns]
    out["wick_diff_sq"] = [mean_stderr((wk[b] - wk[a]) ** 2) for a, b in zip(Ns, Ns[1:])]
    if delta is not None:
        out["sobolev_moment"] = [mean_stderr(np.concatenate(sob[N])) for N in Ns]
    return out


def cauchy_rate_exponent(spec: SpectralDecomposition, N_list, n_samples: int, seed: int = 0) -> dict:
    """Fit of (E|W_{N'} - W_N|²)^{1/2} against λ_N, with W the Wick mass and N' the next level."""
    Ns = sorted(int(N) for N in N_list)
    diffs = [[] for _ in Ns[1:]]
    for _, g in iter_coefficient_batches(seed, n_samples, Ns[-1] + 1):
        terms = (np.abs(g) ** 2 - 2.0) / spec.lambda_sq[: Ns[-1] + 1]
        csum = np.cumsum(terms, axis=1)
        for k, (a, b) in enumerate(zip(Ns, Ns[1:])):
            diffs[k].append(csum[:, b] - csum[:, a])
    ms = [mean_stderr(np.concatenate(x) ** 2) for x in diffs]
    exact = [wick_variance(spec, b, a + 1) for a, b in zip(Ns, Ns[1:])]
    lam = np.sqrt(spec.lambda_sq[Ns[:-1]])
    rms = np.sqrt([m for m, _ in ms])
    slope = float(np.polyfit(np.log(lam), np.log(rms), 1)[0])
    return {"lambda_N": lam, "mc": ms, "exact": exact, "exponent": slope, "predicted": -1.5 + 1.0 / spec.config.s}


def wick_tail_sign_prob(spec: SpectralDecomposition, N: int, n_samples: int, seed: int = 0) -> dict:
    """Empirical P(tail Wick mass > 0) and P(< 0) for modes N < n < n_eigs."""
    top = spec.n_eigs
    if not 0 <= N < top - 1:
        raise ValueError(f"N must lie in [0, {top - 2}] so the tail is nonempty")
    inv = 1.0 / spec.lambda_sq[N + 1 : top]
    pos = neg = 0
    for _, g in iter_coefficient_batches(seed, n_samples, top):
        tail = (np.abs(g[:, N + 1 :]) ** 2 - 2.0) @ inv
        pos += int(np.sum(tail > 0))
        neg += int(np.sum(tail < 0))
    p_pos, p_neg = pos / n_samples, neg / n_samples
    se = math.sqrt(p_pos * (1 - p_pos) / n_samples)
    return {"p_plus": p_pos, "p_minus": p_neg, "stderr": se}
