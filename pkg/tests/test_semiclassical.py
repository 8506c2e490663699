import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from trapgibbs import semiclassical as sc
from trapgibbs import trapspec as ts


def test_query_validation():
    for kwargs in (dict(s=0.0), dict(s=2.0, K=-1.0), dict(s=2.0, E=0.0)):
        with pytest.raises(ValueError):
            sc.PhaseSpaceQuery(**kwargs)
    assert sc.PhaseSpaceQuery(4.0, E=16.0).turning_point == pytest.approx(2.0)


# ---------------------------------------------------------- phase space


def test_volume_harmonic_is_disk():
    assert sc.phase_space_volume(sc.PhaseSpaceQuery(2.0)) == pytest.approx(math.pi, rel=1e-12)


def test_volume_quartic_beta_oracle():
    # 4 ∫_0^1 (1 - x⁴)^{1/2} dx = B(1/4, 3/2)
    assert sc.phase_space_volume(sc.PhaseSpaceQuery(4.0)) == pytest.approx(special.beta(0.25, 1.5), rel=1e-8)


@pytest.mark.parametrize("K", [1.0, 1.5, 10.0])
def test_empty_region(K):
    q = sc.PhaseSpaceQuery(2.0, K)
    assert sc.phase_space_volume(q) == 0.0
    assert sc.classical_energy(q) == 0.0
    assert sc.phase_space_volume_2d(q) == 0.0


def test_classical_energy_harmonic():
    assert sc.classical_energy(sc.PhaseSpaceQuery(2.0)) == pytest.approx(-0.25, rel=1e-12)


@pytest.mark.parametrize("s", [1.5, 2.0, 4.0])
def test_classical_energy_monotone_in_cutoff(s):
    vals = [abs(sc.classical_energy(sc.PhaseSpaceQuery(s, K))) for K in np.linspace(0, 1.2, 13)]
    assert np.all(np.diff(vals) <= 0)


@given(st.sampled_from([1.5, 2.0, 3.0, 4.0]), st.floats(0.0, 0.9), st.floats(0.5, 3.0))
def test_two_routes_agree(s, K, E):
    q = sc.PhaseSpaceQuery(s, K, E)
    assert sc.phase_space_volume_2d(q) == pytest.approx(sc.phase_space_volume(q), rel=1e-6, abs=1e-12)
    assert sc.classical_energy_2d(q) == pytest.approx(sc.classical_energy(q), rel=1e-6, abs=1e-12)


def test_energy_scaling_in_level():
    # (E - x^s)^{3/2} integrates to E^{3/2 + 1/s} times the unit-level value
    a = sc.classical_energy(sc.PhaseSpaceQuery(1.5, 0.0, 1.0))
    b = sc.classical_energy(sc.PhaseSpaceQuery(1.5, 0.0, 4.0))
    assert b / a == pytest.approx(4.0 ** (1.5 + 1 / 1.5), rel=1e-10)


# ---------------------------------------------------------- trace scaling


def test_hbar_count_one_dim(harmonic_1d_fine):
    out = sc.hbar_trace_compare(harmonic_1d_fine, [51.0, 101.0, 201.0, 401.0, 751.0])
    assert out["prediction"] == pytest.approx(0.5, rel=1e-12)
    for row in out["rows"]:
        assert row["hbar_N"] == pytest.approx(0.5, rel=0.03)
        assert row["hbar"] == pytest.approx(1 / row["Lambda"])


def test_hbar_count_three_dim(harmonic_3d):
    # odd-Hermite levels 4n + 3: the count is Λ/4, half the full-line constant
    out = sc.hbar_trace_compare(harmonic_3d, [51.0, 101.0, 190.0])
    for row in out["rows"]:
        assert row["hbar_N"] == pytest.approx(0.25, rel=0.03)


@pytest.fixture(scope="module")
def two_dim():
    return ts.solve_below(2, 1.5, 600.0, 8192, cache=True)


def test_hbar_ratio_two_dim(two_dim):
    out = sc.hbar_trace_compare(two_dim, [20.0, 40.0, 80.0, 160.0, 320.0, 590.0])
    ratios = np.array([row["ratio"] for row in out["rows"]])
    assert np.all((0.2 <= ratios) & (ratios <= 2.0))
    # successive doublings settle: each change at most twice the previous one
    changes = np.abs(np.diff([row["hbar_N"] for row in out["rows"]]))
    assert np.all(changes[1:] <= 2 * changes[:-1])


def test_hbar_ceiling(harmonic_3d):
    with pytest.raises(ValueError, match="ceiling"):
        sc.hbar_trace_compare(harmonic_3d, [1e5])


# ---------------------------------------------------------------- Husimi


def test_odd_window():
    y = np.linspace(-1.5, 1.5, 301)
    w = sc.odd_window(y)
    np.testing.assert_allclose(w, -w[::-1], atol=1e-15)
    assert np.all(w[np.abs(y) >= 1] == 0)


def test_husimi_zero_state():
    rep = sc.husimi_identity_check(sc.husimi_surrogate(0))
    assert rep["max_m"] == 0.0 and rep["trace_identity"] == 0.0


def test_husimi_rank_one_trace():
    rep = sc.husimi_identity_check(sc.husimi_surrogate(1))
    assert rep["trace_identity"] == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("rank", [1, 3, 5])
def test_husimi_bounds_and_identity(rank):
    rep = sc.husimi_identity_check(sc.husimi_surrogate(rank), n_pairs=5, seed=rank)
    assert rep["min_m"] >= 0.0
    assert rep["max_m"] <= 1.0
    assert rep["sampled_max_m"] <= 1.0
    assert rep["trace_error"] <= 1e-3
    assert max(rep["resolution_errors"]) <= 1e-3


def test_surrogate_limits():
    with pytest.raises(ValueError):
        sc.husimi_surrogate(6)
    with pytest.raises(ValueError):
        sc.husimi_surrogate(1, n_grid=1024)
