import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trapgibbs import gaussfield as gf
from trapgibbs import gibbsmc as gm


def test_critical_power_examples():
    assert gm.critical_power(1, 1.5) == pytest.approx(5.0)
    assert gm.critical_power(3, 4.0) == pytest.approx(2 + 4 / 3)
    # both branches meet 2 + 4/d at s = 2
    assert gm.critical_power(2, 2.0 - 1e-12) == pytest.approx(4.0)
    assert gm.critical_power(2, 2.0 + 1e-12) == pytest.approx(4.0)


@given(st.integers(1, 4), st.floats(1.01, 1.99))
def test_subharmonic_threshold_below_harmonic(d, s):
    assert 2.0 < gm.critical_power(d, s) <= 2 + 4 / d + 1e-12


def test_classify_regime():
    assert gm.classify_regime(1, 1.5, 4.0) == ("subcritical", 5.0, "subharmonic")
    assert gm.classify_regime(1, 1.5, 5.0).regime == "critical"
    assert gm.classify_regime(1, 1.5, 6.0).regime == "supercritical"
    assert gm.classify_regime(1, 4.0, 8.0) == ("supercritical", 6.0, "superharmonic")
    assert gm.classify_regime(1, 2.0, 6.0).branch == "harmonic"
    with pytest.raises(ValueError):
        gm.classify_regime(1, 1.0, 4.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(alpha=-1.0),
        dict(K=-0.5),
        dict(p=4 / 1.5),
        dict(n_samples=1),
        dict(d=3, s=2.5, p=6.0),
    ],
)
def test_params_validation(kwargs):
    base = dict(d=1, s=1.5, p=6.0, alpha=1.0, K=1.0, N=32, n_samples=100)
    base.update(kwargs)
    with pytest.raises(ValueError):
        gm.GibbsParams(**base)


def test_wick_switch():
    assert gm.GibbsParams(1, 1.5, 6.0, 1.0, 1.0, 32, 10).wick
    assert not gm.GibbsParams(1, 4.0, 8.0, 1.0, 1.0, 32, 10).wick


# ------------------------------------------------------------- estimator


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=50), st.integers(0, 5))
def test_estimate_matches_direct_mean(logs, n_rejected):
    logw = np.array(logs + [-np.inf] * n_rejected)
    est = gm._estimate_from_logs(logw, 8)
    w = np.exp(logw)
    assert est.mean == pytest.approx(w.mean(), rel=1e-10)
    assert est.stderr == pytest.approx(w.std(ddof=1) / math.sqrt(w.size), rel=1e-8, abs=1e-300)
    assert est.accept_rate == pytest.approx(len(logs) / logw.size)
    assert est.max_single_sample_share == pytest.approx(w.max() / w.sum(), rel=1e-10)


def test_estimate_all_rejected():
    est = gm._estimate_from_logs(np.full(5, -np.inf), 4)
    assert est.mean == 0.0 and est.log_mean == -math.inf and est.accept_rate == 0.0


def test_estimate_survives_overflow():
    est = gm._estimate_from_logs(np.array([900.0, 1.0, 2.0]), 4)
    assert est.mean == math.inf
    assert est.log_mean == pytest.approx(900 - math.log(3))
    assert est.heavy_tail_flag


def test_alpha_zero_is_acceptance_fraction(subharmonic):
    params = gm.GibbsParams(1, 1.5, 6.0, 0.0, 1.0, 64, 3000)
    est = gm.partition_estimate(spec=subharmonic, params=params, seed=4)
    mass = np.concatenate([gf.wick_mass_values(g, subharmonic.lambda_sq) for _, g in gf.iter_coefficient_batches(4, 3000, 65)])
    assert est.mean == pytest.approx(np.mean(np.abs(mass) <= 1.0), abs=1e-12)
    assert 0.0 <= est.mean <= 1.0


def test_zero_cutoff_gives_zero(subharmonic):
    est = gm.partition_estimate(subharmonic, gm.GibbsParams(1, 1.5, 6.0, 1.0, 0.0, 32, 500), seed=1)
    assert est.mean == 0.0


def test_monotone_in_cutoff_and_coupling(subharmonic):
    vals_K = [gm.partition_estimate(subharmonic, gm.GibbsParams(1, 1.5, 6.0, 1.0, K, 64, 2000), seed=2).mean for K in (0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(vals_K) >= 0)
    vals_a = [gm.partition_estimate(subharmonic, gm.GibbsParams(1, 1.5, 6.0, a, 1.0, 64, 2000), seed=2).mean for a in (0.0, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(vals_a) >= 0)


def test_plain_mass_above_two():
    from trapgibbs import trapspec as ts

    spec = ts.solve_below(1, 4.0, 300.0, 1024, vectors=True, cache=True)
    params = gm.GibbsParams(1, 4.0, 8.0, 0.0, 0.5, 16, 2000)
    est = gm.partition_estimate(spec, params, seed=3)
    mass = np.concatenate([(np.abs(g) ** 2) @ (1 / spec.lambda_sq[:17]) for _, g in gf.iter_coefficient_batches(3, 2000, 17)])
    assert est.mean == pytest.approx(np.mean(mass <= 0.5), abs=1e-12)


def test_estimates_deterministic(subharmonic):
    params = gm.GibbsParams(1, 1.5, 6.0, 1.0, 1.0, 32, 1000)
    a = gm.partition_estimate(subharmonic, params, seed=9)
    b = gm.partition_estimate(subharmonic, params, seed=9)
    assert a == b


def test_shared_samples_across_truncations(subharmonic):
    params = gm.GibbsParams(1, 1.5, 6.0, 1.0, 1.0, 32, 800)
    logs = gm.log_weights(subharmonic, params, [32, 64], seed=5)
    alone = gm.log_weights(subharmonic, params, [32], seed=5)
    np.testing.assert_array_equal(logs[32], alone[32])
    multi = gm.log_weights(subharmonic, params, [32], seed=5, alphas=[0.0, 1.0])
    np.testing.assert_array_equal(multi[(32, 1.0)], alone[32])
    with pytest.raises(ValueError):
        gm.log_weights(subharmonic, params, [subharmonic.n_eigs], seed=5)


# ---------------------------------------------------------------- verdicts


def test_verdict_rules():
    assert gm._verdict([1.0, 1.0], [0.1, 0.1], [0.2, 0.7], 3.0) == "divergent"
    # growth without a heavy tail is not enough
    assert gm._verdict([1.0, 1.0], [0.1, 0.1], [0.1, 0.2], 3.0) == "inconclusive"
    assert gm._verdict([0.01, -0.02], [0.1, 0.1], [0.9, 0.9], 3.0) == "bounded"
    assert gm._verdict([1.0, 0.01], [0.1, 0.1], [0.1, 0.9], 3.0) == "inconclusive"
    # the near-critical threshold is stricter
    assert gm._verdict([0.4, 0.4], [0.1, 0.1], [0.1, 0.9], 3.0) == "divergent"
    assert gm._verdict([0.4, 0.4], [0.1, 0.1], [0.1, 0.9], 5.0) == "bounded"


def test_paired_stderr_zero_for_identical():
    x = np.log(np.linspace(1, 2, 50))
    assert gm._paired_log_diff_se(x, x) == 0.0
    assert gm._paired_log_diff_se(np.full(3, -np.inf), x) == math.inf


def test_scan_report_shape(subharmonic):
    params = gm.GibbsParams(1, 1.5, 4.0, 1.0, 1.0, 32, 2000)
    rep = gm.divergence_scan(subharmonic, params, [32, 64, 128], seed=1)
    assert rep.N == [32, 64, 128]
    assert len(rep.log_increments) == 2 and len(rep.increment_stderr) == 2
    assert rep.threshold == 3.0
    assert rep.verdict in ("bounded", "divergent", "inconclusive")
    assert set(rep.to_dict()) == {"N", "estimates", "log_increments", "increment_stderr", "verdict", "threshold"}


def test_probe_preconditions(subharmonic):
    with pytest.raises(ValueError, match="p_crit"):
        gm.critical_alpha_probe(subharmonic, gm.GibbsParams(1, 1.5, 6.0, 1.0, 1.0, 32, 10), [1.0], [16, 32])
    with pytest.raises(ValueError):
        gm.critical_alpha_probe(subharmonic, gm.GibbsParams(1, 4.0, 6.0, 1.0, 1.0, 32, 10), [1.0], [16, 32])


def test_probe_bracket_ordered(subharmonic):
    params = gm.GibbsParams(1, 1.5, 5.0, 1.0, 1.0, 32, 4000)
    out = gm.critical_alpha_probe(subharmonic, params, [1e-3, 1e3], [32, 64, 128], seed=2)
    assert set(out["verdicts"]) == {1e-3, 1e3}
    if out["alpha_low"] is not None and out["alpha_high"] is not None:
        assert out["alpha_low"] < out["alpha_high"]
