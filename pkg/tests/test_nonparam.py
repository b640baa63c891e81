import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pulsedint.interference import (
    Constant,
    Exponential,
    Periodic,
    PoissonImpulse,
    RenewalGeneral,
    TraceFormatError,
    Uniform,
    generate_pulse_train,
    merge_trains,
)
from pulsedint.linksim import Outcome, RecordTable, SimConfig, TransmissionRecord, run_link_sim
from pulsedint.nonparam import (
    BasisSpec,
    CcdfEstimate,
    FitError,
    LossCurve,
    clopper_pearson,
    combine_pair_losses,
    estimate_loss_curve,
    fit_periodic_slope,
    fit_poisson_rate,
    interference_only_loss,
    recover_ccdf_bias_corrected,
    recover_ccdf_direct,
)

MS = 1e-3
GRID = np.arange(1, 21) * MS


def _binom_upper_bisect(k, n, conf):
    """Largest p with P[X <= k] >= (1 - conf)/2, by bisection on the binomial tail."""
    target = (1 - conf) / 2
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if stats.binom.cdf(k, n, mid) > target:
            lo = mid
        else:
            hi = mid
    return lo


def _carrier_sense_curve(t, s, gap):
    clean = (s * (gap >= t) + np.clip(gap - t, 0, None)) / (s + gap)
    return 1 - clean


# -- interval and combination helpers -------------------------------------------


def test_clopper_pearson_zero_successes():
    lo, hi = clopper_pearson(0, 10, 0.95)
    assert lo == 0.0
    assert hi == pytest.approx(_binom_upper_bisect(0, 10, 0.95), abs=1e-10)
    assert hi == pytest.approx(0.3085, abs=1e-4)


def test_clopper_pearson_all_successes_mirrors_zero():
    lo, hi = clopper_pearson(10, 10, 0.95)
    assert hi == 1.0
    assert lo == pytest.approx(1 - 0.3084971078, abs=1e-8)


def test_clopper_pearson_symmetric_at_half():
    lo, hi = clopper_pearson(5, 10, 0.95)
    assert lo < 0.5 < hi
    assert lo == pytest.approx(1 - hi, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.data(), st.sampled_from([0.8, 0.9, 0.95, 0.99]))
def test_clopper_pearson_matches_bisection(n, data, conf):
    k = data.draw(st.integers(0, n - 1))
    _, hi = clopper_pearson(k, n, conf)
    assert hi == pytest.approx(_binom_upper_bisect(k, n, conf), abs=1e-9)


def test_clopper_pearson_rejects_bad_input():
    with pytest.raises(ValueError):
        clopper_pearson(3, 2)
    with pytest.raises(ValueError):
        clopper_pearson(0, 0)
    with pytest.raises(ValueError):
        clopper_pearson(1, 2, 1.0)


def test_combine_pair_losses():
    assert combine_pair_losses(0.1, 0.2) == pytest.approx(0.28)
    assert combine_pair_losses(0.0, 0.0) == 0.0
    assert combine_pair_losses(1.0, 0.37) == 1.0
    np.testing.assert_allclose(combine_pair_losses([0.1, 0.5], [0.2, 0.5]), [0.28, 0.75])


# -- loss curve estimation ----------------------------------------------------------


def _records(t_d, n, k1, k2):
    recs = []
    for i in range(n):
        lost1 = i < k1
        if lost1:
            o2 = Outcome.CENSORED
        else:
            o2 = Outcome.LOST if i - k1 < k2 else Outcome.OK
        recs.append(TransmissionRecord(i, t_d, math.nan, math.nan, Outcome.LOST if lost1 else Outcome.OK, o2, False))
    return recs


def test_estimate_counts_and_rates():
    curve = estimate_loss_curve(_records(0.004, 100, 10, 9))
    (p,) = curve.points
    assert (p.n1, p.k1, p.n2, p.k2) == (100, 10, 90, 9)
    assert p.p1_hat == pytest.approx(0.1)
    assert p.p2_hat == pytest.approx(0.1)
    assert p.p_hat == pytest.approx(0.19)
    assert p.ci1[0] <= p.p1_hat <= p.ci1[1]


def test_estimate_all_first_packets_lost():
    (p,) = estimate_loss_curve(_records(0.004, 20, 20, 0)).points
    assert p.p1_hat == 1.0 and p.censored
    assert math.isnan(p.p2_hat)
    assert p.p_hat == 1.0


def test_estimate_zero_losses_has_upper_bound():
    (p,) = estimate_loss_curve(_records(0.004, 50, 0, 0)).points
    assert p.p_hat == 0.0
    assert p.ci1 == (0.0, pytest.approx(_binom_upper_bisect(0, 50, 0.95), abs=1e-10))


def test_estimate_groups_and_drops_empty():
    groups = {0.002: _records(0.002, 30, 3, 0), 0.004: []}
    with pytest.warns(UserWarning, match="0.004"):
        curve = estimate_loss_curve(groups)
    assert len(curve) == 1


def test_estimate_from_table_groups_by_t_d():
    table = RecordTable.from_records(_records(0.004, 40, 4, 1) + _records(0.002, 60, 2, 0))
    curve = estimate_loss_curve(table)
    np.testing.assert_allclose(curve.t_d, [0.002, 0.004])
    np.testing.assert_allclose(curve.n1, [60, 40])


def test_single_packet_curves_are_unpaired():
    train = generate_pulse_train(PoissonImpulse(50.0), 50.0, seed=0)
    rec = run_link_sim(SimConfig(20.0, 5 * MS, paired=False, horizon=50.0), train)
    (p,) = estimate_loss_curve(rec).points
    assert not p.paired and p.p_hat == p.p1_hat
    assert p.packet_duration == pytest.approx(5 * MS)


def test_loss_curve_csv_round_trip(tmp_path):
    curve = LossCurve.from_probabilities(GRID[:5], [0.1, 0.2, 0.3, 0.4, 1.0], [0.05, 0.1, 0.1, 0.2, 0.0], n=1000)
    single = LossCurve.from_probabilities(GRID[:3], [0.1, 0.2, 1.0], n=500)
    for c in (curve, single):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        c.to_csv(a)
        back = LossCurve.from_csv(a)
        back.to_csv(b)
        assert a.read_bytes() == b.read_bytes()
        counts = [(p.t_d, p.n1, p.k1, p.n2, p.k2, p.paired) for p in c.points]
        assert [(p.t_d, p.n1, p.k1, p.n2, p.k2, p.paired) for p in back.points] == counts
        np.testing.assert_array_equal(back.p2_hat, c.p2_hat)


def test_loss_curve_csv_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("")
    with pytest.raises(TraceFormatError):
        LossCurve.from_csv(p)
    p.write_text(
        "t_d_s,n1,k1,n2,k2,p1,p2,p,ci1_lo,ci1_hi,ci2_lo,ci2_hi,paired\n"
        "0.001,10,2,8,1,0.2,0.125,0.3,0,1,0,1,1\n0.002,10\n"
    )
    with pytest.raises(TraceFormatError) as info:
        LossCurve.from_csv(p)
    assert info.value.line == 3


def test_interference_only_loss_divides_out_collisions():
    p_int1 = np.array([0.1, 0.3])
    p2 = np.array([0.2, 0.4])
    pc = 0.2
    p1 = 1 - (1 - pc) * (1 - p_int1)
    curve = LossCurve.from_probabilities([0.002, 0.004], p1, p2)
    np.testing.assert_allclose(interference_only_loss(curve, pc), 1 - (1 - p_int1) * (1 - p2), atol=1e-8)


# -- slope estimators -----------------------------------------------------------------


def test_periodic_slope_exact_curve():
    t = np.arange(10, 121, 10) * MS
    curve = LossCurve.from_probabilities(t, np.minimum(t / 0.1, 1.0))
    assert fit_periodic_slope(curve) == pytest.approx(0.1, rel=0.01)


def test_periodic_slope_two_points():
    curve = LossCurve.from_probabilities([0.01, 0.02], [0.1, 0.2])
    assert fit_periodic_slope(curve) == pytest.approx(0.1, rel=1e-6)


def test_periodic_slope_saturated():
    curve = LossCurve.from_probabilities([0.01, 0.02], [1.0, 1.0])
    with pytest.raises(FitError, match="period below smallest T_D"):
        fit_periodic_slope(curve)


def test_periodic_slope_simulated():
    train = generate_pulse_train(Periodic(100 * MS), 3000.0, seed=0)
    pts = {}
    for i, td in enumerate(np.arange(10, 91, 20) * MS):
        cfg = SimConfig(10.0, td, paired=False, horizon=3000.0, seed=i)
        pts[td] = run_link_sim(cfg, train)[:10_000]
    assert fit_periodic_slope(estimate_loss_curve(pts)) == pytest.approx(0.1, rel=0.05)


def test_poisson_rate_exact_and_zero():
    t = GRID
    assert fit_poisson_rate(LossCurve.from_probabilities(t, 1 - np.exp(-100 * t))) == pytest.approx(100, rel=1e-6)
    assert fit_poisson_rate(LossCurve.from_probabilities(t, np.zeros_like(t))) == 0.0


def test_poisson_rate_excludes_saturated_points():
    t = GRID
    p = 1 - np.exp(-100 * t)
    p[-1] = 1.0
    with pytest.warns(UserWarning, match="saturated"):
        assert fit_poisson_rate(LossCurve.from_probabilities(t, p, n=10**6)) == pytest.approx(100, rel=1e-3)


def test_poisson_rate_three_interferers():
    horizon = 1500.0
    trains = [generate_pulse_train(PoissonImpulse(20.0), horizon, seed=s) for s in range(3)]
    train = merge_trains(trains)
    pts = {}
    for i, td in enumerate(np.arange(2, 21, 2) * MS):
        cfg = SimConfig(30.0, td, paired=False, horizon=horizon, seed=10 + i)
        pts[td] = run_link_sim(cfg, train)[:10_000]
    assert fit_poisson_rate(estimate_loss_curve(pts)) == pytest.approx(60, rel=0.10)


# -- distribution recovery ---------------------------------------------------------------


def test_direct_periodic_step_and_cycle():
    t = np.arange(10, 121, 10) * MS
    est = recover_ccdf_direct(LossCurve.from_probabilities(t, np.minimum(t / 0.1, 1.0)))
    assert est.mean_cycle == pytest.approx(0.1, rel=1e-6)
    assert est.mean_pulse_duration == 0.0
    assert est.evaluate(0.095) == pytest.approx(1.0, abs=1e-6)
    assert est.evaluate(0.105) == pytest.approx(0.0, abs=1e-6)


def test_direct_poisson_pointwise():
    est = recover_ccdf_direct(LossCurve.from_probabilities(GRID, 1 - np.exp(-GRID / 0.01)))
    assert est.mean_cycle == pytest.approx(0.01, rel=0.01)
    x = np.linspace(0, 0.02, 201)
    assert np.max(np.abs(est.evaluate(x) - np.exp(-x / 0.01))) < 0.02


def test_direct_zero_loss_is_degenerate():
    est = recover_ccdf_direct(LossCurve.from_probabilities(GRID, np.zeros_like(GRID)))
    assert est.degenerate
    np.testing.assert_array_equal(est.ccdf, 1.0)


def test_direct_needs_three_points():
    with pytest.raises(FitError):
        recover_ccdf_direct(LossCurve.from_probabilities(GRID[:2], [0.1, 0.2]))


def test_direct_warns_on_decreasing_curve():
    p = np.linspace(0.1, 0.6, GRID.size)
    p[10] = 0.05
    with pytest.warns(UserWarning, match="decreases"):
        recover_ccdf_direct(LossCurve.from_probabilities(GRID, p, n=10**5))


def test_censored_points_are_left_out():
    p1 = 1 - np.exp(-GRID / 0.02)
    p1[-1] = 1.0
    curve = LossCurve.from_probabilities(GRID, p1, np.zeros_like(GRID))
    assert curve.points[-1].censored
    est = recover_ccdf_direct(curve)
    assert not est.degenerate


def test_bias_corrected_sharp_transition_exact():
    curve = LossCurve.from_probabilities(GRID, _carrier_sense_curve(GRID, 9 * MS, 11 * MS))
    est = recover_ccdf_bias_corrected(curve)
    assert est.cdf(10 * MS) <= 0.1
    assert est.cdf(12 * MS) >= 0.9
    assert est.mean_pulse_duration == pytest.approx(9 * MS, rel=0.15)
    assert est.mean_cycle == pytest.approx(20 * MS, rel=0.01)


def test_bias_corrected_reduces_to_direct_without_bias():
    curve = LossCurve.from_probabilities(GRID, 1 - np.exp(-GRID / 0.008))
    a = recover_ccdf_direct(curve)
    b = recover_ccdf_bias_corrected(curve)
    assert b.mean_pulse_duration == 0.0
    np.testing.assert_allclose(a.ccdf, b.ccdf, atol=1e-9)


def test_bias_corrected_with_explicit_basis():
    curve = LossCurve.from_probabilities(GRID, _carrier_sense_curve(GRID, 5 * MS, 11 * MS))
    basis = BasisSpec(tuple(np.arange(0.5, 21, 1.0) * MS))
    est = recover_ccdf_bias_corrected(curve, basis)
    assert est.cdf(10 * MS) <= 0.1 and est.cdf(12 * MS) >= 0.9
    with pytest.raises(ValueError, match="span"):
        recover_ccdf_bias_corrected(curve, BasisSpec((0.005, 0.01)))


def test_large_residual_warns():
    p = np.where(np.arange(GRID.size) % 2 == 0, 0.1, 0.9)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        recover_ccdf_direct(LossCurve.from_probabilities(GRID, p))
    assert any("residual" in str(w.message) for w in caught)


def test_basis_spec_validation():
    with pytest.raises(ValueError):
        BasisSpec((0.002, 0.001))
    with pytest.raises(ValueError):
        BasisSpec((0.001, 0.002), weights=(0.5, 0.6))
    with pytest.raises(ValueError):
        BasisSpec((0.001, 0.002), kind="spline")
    assert BasisSpec((0.001, 0.002), weights=(0.25, 0.75)).weights == (0.25, 0.75)


def test_estimate_weights_form_a_distribution():
    est = recover_ccdf_direct(LossCurve.from_probabilities(GRID, 1 - np.exp(-GRID / 0.01)))
    w = np.array(est.basis.weights)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)


ROUND_TRIP_GRID = np.arange(2.5, 40.1, 2.5) * MS


def _simulated_curve(model, seed, n, rate=40.0):
    grid = ROUND_TRIP_GRID
    horizon = 1.2 * n * (1 / rate + grid.max()) + 1
    train = generate_pulse_train(model, horizon, seed=seed)
    pts = {}
    for i, td in enumerate(grid):
        cfg = SimConfig(rate, td, paired=False, horizon=horizon, seed=seed * 100 + i)
        pts[td] = run_link_sim(cfg, train)[:n]
    return estimate_loss_curve(pts)


@pytest.mark.parametrize(
    "model, true_ccdf",
    [
        (Periodic(15 * MS), lambda x: (x < 15 * MS).astype(float)),
        (PoissonImpulse(100.0), lambda x: np.exp(-100.0 * x)),
        (RenewalGeneral(Uniform(5 * MS, 15 * MS), Constant(0.0)), lambda x: np.clip((15 * MS - x) / (10 * MS), 0, 1)),
    ],
    ids=["periodic", "poisson", "uniform-gap"],
)
def test_round_trip_from_simulation(model, true_ccdf):
    est = recover_ccdf_direct(_simulated_curve(model, seed=0, n=100_000))
    x = est.grid
    assert np.max(np.abs(est.evaluate(x) - true_ccdf(x))) <= 0.05


def test_uniform_gap_exact_curve_has_small_bias():
    xs = np.linspace(4 * MS, 16 * MS, 200_001)
    y = np.array([np.mean(np.clip(xs - t, 0, None)) for t in ROUND_TRIP_GRID]) / xs.mean()
    est = recover_ccdf_direct(LossCurve.from_probabilities(ROUND_TRIP_GRID, 1 - y))
    truth = np.clip((16 * MS - est.grid) / (12 * MS), 0, 1)
    assert np.max(np.abs(est.ccdf - truth)) < 0.03
    assert est.mean_cycle == pytest.approx(0.01, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=3, max_size=15),
    st.integers(100, 10**6),
    st.booleans(),
)
def test_any_estimate_is_a_valid_ccdf(ps, n, corrected):
    t = (np.arange(len(ps)) + 1) * MS
    curve = LossCurve.from_probabilities(t, np.sort(ps), n=n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            est = (recover_ccdf_bias_corrected if corrected else recover_ccdf_direct)(curve)
        except FitError:
            return
    c = est.ccdf
    assert c[0] == 1.0
    assert np.all(np.diff(c) <= 1e-12)
    assert np.all((c >= 0) & (c <= 1))
    assert est.mean_pulse_duration >= 0


def test_ccdf_csv_round_trip(tmp_path):
    est = recover_ccdf_direct(LossCurve.from_probabilities(GRID, 1 - np.exp(-GRID / 0.007)))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    est.to_csv(a)
    back = CcdfEstimate.from_csv(a)
    back.to_csv(b)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(back.ccdf, est.ccdf)


def test_ccdf_rejects_increasing_values():
    with pytest.raises(ValueError):
        CcdfEstimate([0.0, 1.0], [0.5, 0.6], 0.0, 0.0)
