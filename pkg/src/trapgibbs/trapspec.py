"""Finite-difference radial operator -d²/dr² + (d-1)(d-3)/(4r²) + r^s and its eigenpairs.

For d >= 2 the operator lives on the half line with a Dirichlet condition at
the origin; the grid is r_i = i*h, i = 1..n_grid, with h = r_max/n_grid and a
second Dirichlet ghost node at r_max + h.  For d = 1 the full-line operator
-d²/dx² + |x|^s is discretized on the open interval (-r_max, r_max).

Eigenfunctions g_n are normalized in L²(dr) with the trapezoid rule, which on
a grid with vanishing boundary values reduces to h * sum(g**2).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

CACHE_ENV = "TRAPGIBBS_CACHE"
_MAGIC = b"TRAPSPEC"
STEMR_MAX = 8192


class TruncationWarning(UserWarning):
    """The top computed eigenvalue is too close to the box potential r_max^s."""


@dataclass(frozen=True)
class TrapConfig:
    d: int
    s: float
    r_max: float
    n_grid: int
    n_eigs: int

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension d must be an integer >= 1, got {self.d}")
        if not (math.isfinite(self.s) and self.s > 0):
            raise ValueError(f"trap exponent s must be positive, got {self.s}")
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise ValueError(f"r_max must be positive and finite, got {self.r_max}")
        if self.n_grid < 16:
            raise ValueError(f"n_grid must be >= 16, got {self.n_grid}")
        if not 1 <= self.n_eigs < self.n_grid:
            raise ValueError(f"need 1 <= n_eigs < n_grid, got n_eigs={self.n_eigs}")

    @classmethod
    def for_energy(cls, d: int, s: float, top_energy: float, n_grid: int, n_eigs: int) -> TrapConfig:
        """Config whose box satisfies r_max^s = 4 * top_energy."""
        return cls(d=d, s=s, r_max=(4.0 * top_energy) ** (1.0 / s), n_grid=n_grid, n_eigs=n_eigs)

    @property
    def sphere_area(self) -> float:
        """|S^{d-1}|, with the convention |S^0| = 2."""
        return 2.0 * math.pi ** (self.d / 2) / math.gamma(self.d / 2)

    @property
    def energy_ceiling(self) -> float:
        return self.r_max**self.s / 4.0

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]


@dataclass(frozen=True)
class TridiagonalOperator:
    config: TrapConfig
    grid: np.ndarray
    h: float
    diag: np.ndarray
    offdiag: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out

    def quadratic_form(self, v: np.ndarray) -> float:
        """<v, L v> in L²(dr) with grid weight h."""
        return float(self.h * np.dot(v, self.matvec(v)))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of one operator instance.

    ``lambda_sq_grid`` are the exact eigenvalues of the assembled matrix; the
    ``lambda_sq`` array equals it unless Richardson extrapolation was requested,
    in which case it carries the h -> 0 extrapolated values.
    """

    config: TrapConfig
    lambda_sq: np.ndarray
    eigfun: np.ndarray  # shape (n_eigs, n_grid); empty when vectors were skipped
    grid: np.ndarray
    lambda_sq_grid: np.ndarray
    valid: bool = True
    extrapolated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def n_eigs(self) -> int:
        return self.lambda_sq.size

    @property
    def lam(self) -> np.ndarray:
        """λ_n = sqrt(λ_n²)."""
        return np.sqrt(self.lambda_sq)

    @property
    def has_vectors(self) -> bool:
        return self.eigfun.size > 0


def _grid(config: TrapConfig) -> tuple[np.ndarray, float]:
    n = config.n_grid
    if config.d == 1:
        h = 2.0 * config.r_max / (n + 1)
        return -config.r_max + h * np.arange(1, n + 1), h
    h = config.r_max / n
    return h * np.arange(1, n + 1), h


def _potential(config: TrapConfig, x: np.ndarray) -> np.ndarray:
    pot = np.abs(x) ** config.s
    if config.d >= 2:
        coef = (config.d - 1) * (config.d - 3) / 4.0
        if coef != 0.0:
            pot = pot + coef / x**2
    return pot


def assemble_operator(config: TrapConfig) -> TridiagonalOperator:
    """Central second differences plus the diagonal potential."""
    grid, h = _grid(config)
    pot = _potential(config, grid)
    if not np.all(np.isfinite(pot)):
        raise ValueError("potential has non-finite values on the grid")
    diag = 2.0 / h**2 + pot
    offdiag = np.full(grid.size - 1, -1.0 / h**2)
    return TridiagonalOperator(config=config, grid=grid, h=h, diag=diag, offdiag=offdiag)


def semiclassical_operator(config: TrapConfig, hbar: float) -> TridiagonalOperator:
    """-hbar² d²/dy² + |y|^s on the box rescaled by y = x * hbar^(2/(s+2)).

    With hbar = Λ^(-1/2-1/s), the eigenvalues are those of ``config`` divided by Λ.
    """
    if config.d != 1:
        raise ValueError("semiclassical rescaling is implemented for d = 1")
    lam = hbar ** (-1.0 / (0.5 + 1.0 / config.s))
    x, h = _grid(config)
    scale = lam ** (-1.0 / config.s)
    y, hy = x * scale, h * scale
    diag = 2.0 * hbar**2 / hy**2 + np.abs(y) ** config.s
    offdiag = np.full(y.size - 1, -(hbar**2) / hy**2)
    cfg = TrapConfig(d=1, s=config.s, r_max=config.r_max * scale, n_grid=config.n_grid, n_eigs=config.n_eigs)
    return TridiagonalOperator(config=cfg, grid=y, h=hy, diag=diag, offdiag=offdiag)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first entry above 1e-8 of the column maximum must be positive: for a
    # Dirichlet problem this is the sign of g'(0+) (left edge for d = 1)
    amax = np.max(np.abs(vecs), axis=0)
    first = np.argmax(np.abs(vecs) > 1e-8 * amax, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def inverse_iteration(op: TridiagonalOperator, eigenvalues: np.ndarray, iterations: int = 3) -> np.ndarray:
    """Eigenvectors for known matrix eigenvalues, one banded solve per step, shape (n, k).

    O(n) per vector, against O(n²) workspace for MRRR on large grids.
    """
    n = op.size
    ab = np.zeros((3, n))
    ab[0, 1:] = op.offdiag
    ab[2, :-1] = op.offdiag
    rng = np.random.default_rng(0)
    out = np.empty((n, len(eigenvalues)))
    for j, lam in enumerate(eigenvalues):
        # a shift a few ulps off the eigenvalue keeps the factorization nonsingular
        shift = lam + 8 * np.finfo(float).eps * max(abs(lam), 1.0)
        ab[1] = op.diag - shift
        v = rng.standard_normal(n)
        for _ in range(iterations):
            v = solve_banded((1, 1), ab, v, check_finite=False)
            v /= np.linalg.norm(v)
        out[:, j] = v
    return out


def _matrix_eigenvalues(op: TridiagonalOperator, n_eigs: int) -> np.ndarray:
    return eigh_tridiagonal(
        op.diag, op.offdiag, eigvals_only=True, select="i", select_range=(0, n_eigs - 1)
    )


def richardson_eigenvalues(config: TrapConfig, n_eigs: int, coarse: np.ndarray | None = None) -> np.ndarray:
    """Extrapolate the lowest eigenvalues to h -> 0 from grids h and h/2.

    The stencil error is O(h²), so (4 λ(h/2) - λ(h)) / 3 removes the leading term.
    """
    if coarse is None:
        coarse = _matrix_eigenvalues(assemble_operator(config), n_eigs)
    if config.d == 1:
        fine_n = 2 * config.n_grid + 1
    else:
        fine_n = 2 * config.n_grid
    fine_cfg = TrapConfig(d=config.d, s=config.s, r_max=config.r_max, n_grid=fine_n, n_eigs=n_eigs)
    fine = _matrix_eigenvalues(assemble_operator(fine_cfg), n_eigs)
    return (4.0 * fine - coarse) / 3.0


def eigensolve(
    op: TridiagonalOperator,
    n_eigs: int | None = None,
    *,
    vectors: bool = True,
    extrapolate: bool = False,
) -> SpectralDecomposition:
    """Lowest ``n_eigs`` eigenpairs of the assembled operator."""
    cfg = op.config
    n_eigs = cfg.n_eigs if n_eigs is None else n_eigs
    if not 1 <= n_eigs <= op.size - 1:
        raise ValueError(f"n_eigs must lie in [1, {op.size - 1}], got {n_eigs}")
    try:
        if vectors:
            # MRRR is much faster for many vectors but allocates an n x n workspace
            if op.size <= STEMR_MAX:
                vals, vecs = eigh_tridiagonal(
                    op.diag, op.offdiag, select="i", select_range=(0, n_eigs - 1), lapack_driver="stemr"
                )
            else:
                vals = _matrix_eigenvalues(op, n_eigs)
                vecs = inverse_iteration(op, vals)
            vecs = _fix_signs(vecs / np.sqrt(op.h * np.sum(vecs**2, axis=0)))
            eigfun = np.ascontiguousarray(vecs.T)
        else:
            vals = _matrix_eigenvalues(op, n_eigs)
            eigfun = np.empty((0, op.size))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"tridiagonal eigensolver failed to converge: {exc}") from exc

    lambda_sq = richardson_eigenvalues(cfg, n_eigs, vals) if extrapolate else vals.copy()
    valid = bool(vals[-1] <= cfg.energy_ceiling)
    if not valid:
        warnings.warn(
            f"top eigenvalue {vals[-1]:.4g} exceeds r_max^s/4 = {cfg.energy_ceiling:.4g}; "
            "box truncation may distort the spectrum",
            TruncationWarning,
            stacklevel=2,
        )
    return SpectralDecomposition(
        config=cfg,
        lambda_sq=lambda_sq,
        eigfun=eigfun,
        grid=op.grid,
        lambda_sq_grid=vals,
        valid=valid,
        extrapolated=extrapolate,
    )


def solve(config: TrapConfig, *, vectors: bool = True, extrapolate: bool = False, cache: bool = False) -> SpectralDecomposition:
    """assemble_operator followed by eigensolve, optionally through the disk cache."""
    path = None
    if cache:
        path = cache_path(config, vectors=vectors, extrapolate=extrapolate)
        if path.exists():
            return load_decomposition(path)
    spec = eigensolve(assemble_operator(config), config.n_eigs, vectors=vectors, extrapolate=extrapolate)
    if path is not None:
        save_decomposition(spec, path)
    return spec


def solve_below(
    d: int, s: float, top_energy: float, n_grid: int, *, vectors: bool = False, extrapolate: bool = False, cache: bool = False
) -> SpectralDecomposition:
    """Every eigenpair up to ``top_energy``, on the box r_max^s = 4 * top_energy."""
    probe = TrapConfig.for_energy(d, s, top_energy, n_grid, 1)
    op = assemble_operator(probe)
    count = eigh_tridiagonal(op.diag, op.offdiag, eigvals_only=True, select="v", select_range=(-np.inf, top_energy)).size
    if not 1 <= count < op.size:
        raise ValueError(f"n_grid = {n_grid} is too coarse for {count} eigenvalues below {top_energy}")
    return solve(TrapConfig.for_energy(d, s, top_energy, n_grid, count), vectors=vectors, extrapolate=extrapolate, cache=cache)


def to_radial_eigenfunction(spec: SpectralDecomposition, n: int) -> np.ndarray:
    """e_n(r) = |S^{d-1}|^{-1/2} r^{-(d-1)/2} g_n(r), normalized in L²(R^d)."""
    cfg = spec.config
    if cfg.d == 1:
        raise ValueError("d = 1 has no radial change of variables")
    if not spec.has_vectors:
        raise ValueError("decomposition was computed without eigenvectors")
    return spec.eigfun[n] * spec.grid ** (-(cfg.d - 1) / 2.0) / math.sqrt(cfg.sphere_area)


def radial_weight(spec: SpectralDecomposition) -> np.ndarray:
    """Quadrature weight turning grid sums of radial functions into integrals over R^d."""
    cfg = spec.config
    if cfg.d == 1:
        return np.full(spec.grid.size, spec.h)
    return spec.h * cfg.sphere_area * spec.grid ** (cfg.d - 1)


def residual_check(spec: SpectralDecomposition, *, richardson: bool = False) -> dict:
    """Relative residual ||L g_n - λ_n² g_n|| / λ_n² per eigenpair of the matrix."""
    op = assemble_operator(spec.config)
    res = np.array(
        [
            np.linalg.norm(op.matvec(g) - lam * g) * math.sqrt(op.h) / lam
            for g, lam in zip(spec.eigfun, spec.lambda_sq_grid)
        ]
    )
    out = {"residual": res, "max_residual": float(res.max()) if res.size else 0.0}
    if richardson:
        extra = richardson_eigenvalues(spec.config, spec.n_eigs, spec.lambda_sq_grid)
        out["richardson_correction"] = np.abs(extra - spec.lambda_sq_grid) / extra
    return out


# ---------------------------------------------------------------- cache


def cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV)
    base = Path(root) if root else Path.home() / ".cache" / "trapgibbs"
    base.mkdir(parents=True, exist_ok=True)
    return base


def cache_path(config: TrapConfig, *, vectors: bool = True, extrapolate: bool = False) -> Path:
    tag = f"{config.key()}-{'v' if vectors else 'e'}{'x' if extrapolate else ''}"
    return cache_dir() / f"spec-{tag}.bin"


def save_decomposition(spec: SpectralDecomposition, path: str | os.PathLike) -> None:
    """Binary layout: magic, u32 header length, JSON header, then '<f8' arrays."""
    header = {
        "config": asdict(spec.config),
        "n_eigs": spec.n_eigs,
        "n_grid": spec.grid.size,
        "vectors": spec.has_vectors,
        "valid": spec.valid,
        "extrapolated": spec.extrapolated,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in (spec.lambda_sq, spec.lambda_sq_grid, spec.grid, spec.eigfun):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_decomposition(path: str | os.PathLike) -> SpectralDecomposition:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a spectral cache file")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    k, n = header["n_eigs"], header["n_grid"]
    lambda_sq, lambda_sq_grid, grid = raw[:k], raw[k : 2 * k], raw[2 * k : 2 * k + n]
    eig = raw[2 * k + n :]
    eigfun = eig.reshape(k, n) if header["vectors"] else np.empty((0, n))
    return SpectralDecomposition(
        config=TrapConfig(**header["config"]),
        lambda_sq=lambda_sq.astype(float),
        eigfun=eigfun.astype(float),
        grid=grid.astype(float),
        lambda_sq_grid=lambda_sq_grid.astype(float),
        valid=header["valid"],
        extrapolated=header["extrapolated"],
    )
