import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trapgibbs import gaussfield as gf
from trapgibbs import trapspec as ts


# ----------------------------------------------------------- coefficients


def test_coefficients_deterministic():
    a = gf.coefficients(7, 0, 10, 5)
    b = gf.coefficients(7, 0, 10, 5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, gf.coefficients(8, 0, 10, 5))


@given(st.integers(0, 3000), st.integers(1, 1500), st.integers(1, 200), st.integers(0, 2**32))
def test_coefficients_independent_of_batching(start, count, n_modes, seed):
    whole = gf.coefficients(seed, start, count, n_modes)
    cut = count // 2
    parts = np.vstack([gf.coefficients(seed, start, cut, n_modes), gf.coefficients(seed, start + cut, count - cut, n_modes)])
    np.testing.assert_array_equal(whole, parts)


@given(st.integers(1, 300), st.integers(1, 300))
def test_coefficients_independent_of_truncation(n1, n2):
    a = gf.coefficients(3, 100, 20, n1)
    b = gf.coefficients(3, 100, 20, n2)
    k = min(n1, n2)
    np.testing.assert_array_equal(a[:, :k], b[:, :k])


def test_batch_iterator_covers_all_samples():
    got = np.vstack([g for _, g in gf.iter_coefficient_batches(5, 5000, 3, batch=1024)])
    np.testing.assert_array_equal(got, gf.coefficients(5, 0, 5000, 3))


def test_coefficient_variance():
    g = gf.coefficients(11, 0, 100_000, 4)
    m, se = gf.mean_stderr(np.abs(g[:, 0]) ** 2)
    assert abs(m - 2.0) <= 3 * se
    m_re, se_re = gf.mean_stderr(g[:, 1].real)
    assert abs(m_re) <= 3 * se_re


@pytest.fixture(scope="module")
def subharmonic_wide():
    """d = 1, s = 1.5 with about 600 modes and eigenvectors."""
    return ts.solve_below(1, 1.5, 450.0, 8192, vectors=True, cache=True)


# ------------------------------------------------------------- fields


def test_sample_reproducible(subharmonic):
    a = gf.sample_field(subharmonic, 50, seed=1, index=3)
    b = gf.sample_field(subharmonic, 50, seed=1, index=3)
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(ValueError):
        gf.sample_field(subharmonic, subharmonic.n_eigs, seed=1)


def test_sample_mass_parseval(subharmonic):
    smp = gf.sample_field(subharmonic, 80, seed=2)
    # ∫|u_N|² = sum |g_n|²/λ_n² by orthonormality
    assert smp.lp_norm(2.0) ** 2 == pytest.approx(smp.mass(), rel=1e-8)


@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3), st.sampled_from([2.0, 4.0, 6.0, 3.5]))
def test_lp_norm_scales_linearly(a, p):
    spec = ts.solve_below(1, 1.5, 40.0, 1024, vectors=True, cache=True)
    smp = gf.sample_field(spec, 20, seed=4)
    scaled = gf.FieldSample(spec=spec, N=20, g=a * smp.g, seed=4, index=0)
    assert scaled.lp_norm(p) == pytest.approx(abs(a) * smp.lp_norm(p), rel=1e-10)


def test_field_grid_matches_full_grid(subharmonic):
    N = 100
    fg = gf.field_grid(subharmonic, N)
    g = gf.coefficients(9, 0, 4, N + 1)
    vals = gf.field_values(fg, g)
    for i in range(4):
        full = gf.FieldSample(subharmonic, N, g[i], 9, i).values
        np.testing.assert_allclose(vals[i], np.interp(fg.x, subharmonic.grid, full.real) + 1j * np.interp(fg.x, subharmonic.grid, full.imag), atol=1e-12)
    np.testing.assert_allclose(gf.field_abs2(fg, g), np.abs(vals) ** 2, rtol=1e-12)
    # the subsampled quadrature keeps L^4 norms to a fraction of a percent
    full4 = np.array([gf.FieldSample(subharmonic, N, g[i], 9, i).lp_norm(4.0) ** 4 for i in range(4)])
    np.testing.assert_allclose(gf.lp_power(fg, vals, 4.0), full4, rtol=5e-3)
    np.testing.assert_allclose(gf.lp_power_abs2(fg, np.abs(vals) ** 2, 3.0), gf.lp_power(fg, vals, 3.0), rtol=1e-12)


def test_field_requires_vectors():
    bare = ts.solve(ts.TrapConfig(1, 2.0, 8.0, 64, 5), vectors=False)
    with pytest.raises(ValueError):
        gf.spatial_eigenfunctions(bare, 2)


# ------------------------------------------------------------ variance


def test_sigma_single_term(harmonic_1d):
    e0 = harmonic_1d.eigfun[0]
    np.testing.assert_allclose(gf.sigma_N(harmonic_1d, 0), 2 * e0**2 / harmonic_1d.lambda_sq[0])


def test_sigma_integrates_to_mass(subharmonic):
    N = 120
    sig = gf.sigma_N(subharmonic, N)
    assert np.sum(sig * ts.radial_weight(subharmonic)) == pytest.approx(gf.sigma_mass(subharmonic, N), rel=1e-8)


def test_sigma_matches_monte_carlo(subharmonic):
    N = 60
    fg = gf.field_grid(subharmonic, N)
    abs2 = np.vstack([gf.field_abs2(fg, g) for _, g in gf.iter_coefficient_batches(21, 20_000, N + 1)])
    idx = np.linspace(0, fg.x.size - 1, 12).astype(int)[1:-1]
    exact = gf.sigma_N(subharmonic, N, fg.x[idx])
    for k, i in enumerate(idx):
        m, se = gf.mean_stderr(abs2[:, i])
        assert abs(m - exact[k]) <= 3 * se + 1e-3 * exact[k]


def test_sigma_mass_growth_two_dim():
    spec = ts.solve_below(2, 1.5, 600.0, 8192, vectors=False, cache=True)
    N = spec.n_eigs - 1
    Ns = [N // 16, N // 8, N // 4, N // 2, N]
    inc = np.diff([gf.sigma_mass(spec, n) for n in Ns])
    lam = np.sqrt(spec.lambda_sq[Ns[1:]])
    assert np.polyfit(np.log(lam), np.log(inc), 1)[0] == pytest.approx(1 / 3, rel=0.10)


def test_sigma_mass_converges_above_two():
    # s = 4: increments over doublings decay like λ_N^{-1/2}
    spec = ts.solve_below(1, 4.0, 2000.0, 4096, vectors=False, cache=True)
    N = spec.n_eigs - 1
    Ns = [N // 16, N // 8, N // 4, N // 2, N]
    inc = np.diff([gf.sigma_mass(spec, n) for n in Ns])
    lam = np.sqrt(spec.lambda_sq[Ns[1:]])
    assert np.all(np.diff(inc) < 0)
    assert np.polyfit(np.log(lam), np.log(inc), 1)[0] == pytest.approx(-0.5, rel=0.10)


# ------------------------------------------------------------------ Wick


def test_wick_mass_at_zero_coefficients(subharmonic):
    lsq = subharmonic.lambda_sq[:31]
    assert gf.wick_mass_values(np.zeros(31), lsq)[0] == pytest.approx(-2 * np.sum(1 / lsq))


def test_wick_mean_and_variance(subharmonic):
    N = subharmonic.n_eigs - 1
    vals = np.concatenate([gf.wick_mass_values(g, subharmonic.lambda_sq) for _, g in gf.iter_coefficient_batches(5, 100_000, N + 1)])
    m, se = gf.mean_stderr(vals)
    assert abs(m) <= 3 * se
    var = gf.wick_variance(subharmonic, N)
    v, vse = gf.mean_stderr(vals**2)
    assert abs(v - var) <= 3 * vse
    assert var == pytest.approx(4 * np.sum(subharmonic.lambda_sq[: N + 1] ** -2.0))


def test_wick_mass_additive(subharmonic):
    g = gf.coefficients(3, 0, 50, subharmonic.n_eigs)
    full = gf.wick_mass_values(g, subharmonic.lambda_sq)
    head = gf.wick_mass_values(g[:, :65], subharmonic.lambda_sq)
    tail = (np.abs(g[:, 65:]) ** 2 - 2) @ (1 / subharmonic.lambda_sq[65:])
    np.testing.assert_allclose(head + tail, full, rtol=1e-12, atol=1e-12)
    smp = gf.sample_field(subharmonic, 64, seed=3)
    assert gf.wick_mass(smp).value == pytest.approx(head[0])


def test_cauchy_rate(subharmonic):
    N = subharmonic.n_eigs - 1
    out = gf.cauchy_rate_exponent(subharmonic, [N // 16, N // 8, N // 4, N // 2, N], 20_000, seed=2)
    assert out["exponent"] == pytest.approx(-1.5 + 1 / 1.5, rel=0.15)
    for (m, se), ex in zip(out["mc"], out["exact"]):
        assert abs(m - ex) <= 3 * se


def test_tail_sign_single_term(subharmonic):
    n = 100_000
    out = gf.wick_tail_sign_prob(subharmonic, subharmonic.n_eigs - 2, n, seed=6)
    assert abs(out["p_plus"] - math.exp(-1)) <= 3 * out["stderr"]
    assert out["p_plus"] + out["p_minus"] == 1.0


def test_tail_sign_balanced(subharmonic_long):
    for N in (64, 256, 1024):
        out = gf.wick_tail_sign_prob(subharmonic_long, N, 4000, seed=1)
        assert min(out["p_plus"], out["p_minus"]) >= 0.2
    with pytest.raises(ValueError):
        gf.wick_tail_sign_prob(subharmonic_long, subharmonic_long.n_eigs - 1, 10)


# ------------------------------------------------------------- moments


def test_moment_window():
    with pytest.raises(ValueError, match="max"):
        gf.check_moment_window(4 / 1.5, 1.5, 1)
    with pytest.raises(ValueError, match="2d/"):
        gf.check_moment_window(6.0, 2.0, 3)
    with pytest.raises(ValueError, match="delta"):
        gf.check_moment_window(4.0, 1.5, 1, delta=0.1)
    gf.check_moment_window(4.0, 1.5, 1, delta=0.5)


def test_moment_report_bounded(subharmonic_wide):
    out = gf.moment_report(subharmonic_wide, [64, 128, 256, 512], 4.0, 4.0, 4000, delta=0.5, seed=3)
    vals = np.array([m for m, _ in out["lp_moment"]])
    ses = np.array([se for _, se in out["lp_moment"]])
    # uniform in N: the last two levels agree within the combined error
    assert abs(vals[-1] - vals[-2]) <= 3 * math.hypot(ses[-1], ses[-2])
    assert np.all(np.isfinite(vals))
    assert len(out["wick_diff_sq"]) == 3
    sob = [m for m, _ in out["sobolev_moment"]]
    assert np.all(np.diff(sob) >= 0)
