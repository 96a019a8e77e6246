import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnabc.calibration import (CalibrationError, Metric, calibrate, check_schedule, discrepancy,
                                estimate_A, initial_tolerance, log_space_schedule,
                                pilot_epsilon_run)
from knnabc.models import MA2, GaussianToy
from knnabc.rng import DATA, DomainError, stream


def double_sum(A, s, s0):
    d = s - s0
    return sum(A[i, j] * d[i] * d[j] for i in range(len(d)) for j in range(len(d)))


def test_discrepancy_zero_at_s0():
    m = Metric(np.eye(3), [1.0, 2.0, 3.0])
    assert discrepancy(m, np.array([1.0, 2.0, 3.0])) == 0.0


def test_discrepancy_euclidean():
    assert Metric(np.eye(2), [0.0, 0.0])(np.array([3.0, 4.0])) == 25.0


def test_discrepancy_double_sum_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = rng.standard_normal((4, 4))
        A = X @ X.T + np.eye(4)
        s, s0 = rng.standard_normal(4), rng.standard_normal(4)
        assert Metric(A, s0)(s) == pytest.approx(double_sum(A, s, s0), abs=1e-12)


def test_discrepancy_rows_and_mismatch():
    m = Metric(np.diag([1.0, 2.0]), [0.0, 0.0])
    S = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert np.allclose(m(S), [3.0, 8.0])
    with pytest.raises(DomainError):
        m(np.ones(3))
    with pytest.raises(DomainError):
        Metric(np.eye(3), [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_discrepancy_symmetrization_invariant(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    s, s0 = rng.standard_normal(3), rng.standard_normal(3)
    direct = float((s - s0) @ A @ (s - s0))
    assert Metric(A, s0)(s) == pytest.approx(direct, rel=1e-10, abs=1e-10)


def test_metric_json_roundtrip(tmp_path):
    m = Metric([[2.0, 0.5], [0.5, 1.0]], [0.1, 0.2])
    path = tmp_path / "metric.json"
    m.save(path)
    back = Metric.load(path)
    assert np.array_equal(back.A, m.A) and np.array_equal(back.s0, m.s0)
    assert m.to_dict()["p"] == 2


def test_estimate_A_scalar_inverse_variance():
    # toy summary is one N(theta, 1) draw, so its variance at any theta is 1
    model = GaussianToy()
    metric, pooled = estimate_A(model, np.array([0.3]), stream(2), rounds=2, n_outer=100,
                                n_inner=5000)
    assert metric.A[0, 0] == pytest.approx(1.0, abs=0.06)
    assert pooled.shape == (200, 1)


def test_estimate_A_symmetric_psd_deterministic():
    model = MA2()
    y0 = model.simulate(model.truth, 200, stream(3, DATA))
    a, _ = estimate_A(model, y0, stream(4), n_outer=200, n_inner=50)
    b, _ = estimate_A(model, y0, stream(4), n_outer=200, n_inner=50)
    assert np.array_equal(a.A, b.A)
    assert np.abs(a.A - a.A.T).max() <= 1e-12
    assert np.linalg.eigvalsh(a.A).min() >= 0


def test_estimate_A_chi_square_scale():
    model = MA2()
    y0 = model.simulate(model.truth, 200, stream(5, DATA))
    metric, _ = estimate_A(model, y0, stream(6))
    sims = model.summarize_many(model.simulate_many(model.truth, 500, 200, stream(7)))
    med = np.median(metric(sims))
    assert model.p / 10 < med < 10 * model.p


def test_log_space_schedule_decades():
    assert np.allclose(log_space_schedule(1000.0, 1.0, 3), [1000, 100, 10, 1], rtol=1e-12)


def test_log_space_schedule_endpoints_and_ratio():
    eps = log_space_schedule(7.43, 0.0171, 15)
    assert eps[0] == 7.43 and eps[-1] == 0.0171 and eps.size == 16
    ratios = eps[1:-1] / eps[:-2]
    assert np.allclose(ratios, ratios[0], rtol=1e-12, atol=0)


def test_log_space_schedule_errors():
    with pytest.raises(DomainError):
        log_space_schedule(1.0, 2.0, 3)
    with pytest.raises(DomainError):
        log_space_schedule(1.0, 0.0, 3)
    with pytest.raises(DomainError):
        log_space_schedule(2.0, 1.0, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1.01, 1e3), st.integers(1, 30))
def test_log_space_schedule_reversal(lo, factor, J):
    hi = lo * factor
    down = log_space_schedule(hi, lo, J)
    # going up the same ladder: exp of the reversed log grid
    up = np.exp(np.log(lo) + np.arange(J + 1) * (np.log(hi) - np.log(lo)) / J)
    assert np.allclose(down[::-1], up, rtol=1e-12)
    assert np.all(np.diff(down) < 0)


def test_check_schedule():
    assert check_schedule([3.0, 2.0, 1.0]).size == 3
    for bad in ([1.0, 2.0], [1.0, 1.0], [2.0, -1.0], [1.0]):
        with pytest.raises(DomainError):
            check_schedule(bad)


def test_initial_tolerance_uniform_population():
    u = stream(8).uniform(size=10 ** 5)
    metric = Metric([[1.0]], [0.0])
    assert initial_tolerance(metric, np.sqrt(u)[:, None]) == pytest.approx(0.05, abs=0.003)


def _ma2_setup(seed):
    model = MA2()
    y0 = model.simulate(model.truth, 200, stream(seed, DATA))
    metric, pooled = estimate_A(model, y0, stream(seed), n_outer=200, n_inner=50)
    return model, y0, metric, pooled


def test_pilot_shrinks_and_is_deterministic():
    model, y0, metric, pooled = _ma2_setup(9)
    a = pilot_epsilon_run(model, y0, metric, 10, 1500, 15, pooled)
    b = pilot_epsilon_run(model, y0, metric, 10, 1500, 15, pooled)
    assert a[0] == b[0] and a[1] == b[1]
    eps0, epsJ, pilot = a
    assert epsJ <= eps0
    assert eps0 == pytest.approx(np.quantile(metric(pooled), 0.05))
    # the tolerance path never increases and stays at eps0 through a_1
    assert np.all(np.diff(pilot.eps) <= 0)
    assert np.all(pilot.eps[:2 * 100 - 1] == eps0)
    assert isinstance(pilot.flags["empty_windows"], int)


def test_calibrate_ma2_shapes():
    model = MA2()
    y0 = model.simulate(model.truth, 200, stream(11, DATA))
    metric, eps, _ = calibrate(model, y0, 12, B=1500, J=15, n_outer=200, n_inner=50)
    assert metric.A.shape == (3, 3) and eps.size == 16
    check_schedule(eps)


def test_calibrate_fails_loudly_without_shrinkage():
    model = GaussianToy()
    with pytest.raises(CalibrationError):
        # a one-iteration pilot cannot accept anything
        calibrate(model, np.array([0.0]), 13, B=1, J=1, rounds=1, n_outer=50, n_inner=50)
