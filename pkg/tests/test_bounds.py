import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rcbounds import bounds, dynsys, forecast
from rcbounds.bounds import BoundParams
from rcbounds.errors import SaturationError, UsageError

TABLE1_LORENZ = BoundParams(eps=8.988e-6, delta=1e-3, lambda1=0.8733, R=0.4089, L_h=0.2216,
                            L_z=82.03, dt=0.02)


def test_bound_y_zero_exponent_limit():
    bp = BoundParams(1e-3, 1e-300, 0.0, 1.0, 1.0, 1.0, 1.0)
    np.testing.assert_allclose(bounds.bound_y(bp, np.arange(1, 50)), 3e-3, rtol=1e-12)


def test_bound_y_table1_value():
    expect = 8.988e-6 * (1 + 2 * 0.2216 * 82.03 * 0.4089 * math.exp(100 * 0.02 * 0.8743))
    assert bounds.bound_y(TABLE1_LORENZ, 100) == pytest.approx(expect, rel=1e-14)
    assert bounds.bound_y(TABLE1_LORENZ, 100) == pytest.approx(7.77e-4, rel=2e-3)


def test_bound_x_table1_value_at_zero():
    assert bounds.bound_x(TABLE1_LORENZ, 0) == pytest.approx(2 * 8.988e-6 * 82.03 * 0.4089,
                                                            rel=1e-14)
    assert bounds.bound_x(TABLE1_LORENZ, 0) == pytest.approx(6.03e-4, rel=1e-3)


def test_zero_R_gives_eps():
    bp = BoundParams(2e-4, 1e-3, 0.9, 0.0, 3.0, 4.0, 0.02)
    np.testing.assert_array_equal(bounds.bound_y(bp, np.arange(1, 100)), 2e-4)


def test_negative_exponent_is_clipped():
    a = BoundParams(1e-4, 1e-3, -5.0, 1.0, 1.0, 1.0, 0.1)
    b = BoundParams(1e-4, 1e-3, 0.0, 1.0, 1.0, 1.0, 0.1)
    assert bounds.bound_y(a, 30) == bounds.bound_y(b, 30)


def test_step_units():
    bp = BoundParams(1e-4, 1e-3, 0.05, 1.0, 1.0, 1.0, dt=0.02)
    assert bounds.bound_y(bp, 10, units="step") == pytest.approx(1e-4 * (1 + 2 * math.exp(0.51)))
    with pytest.raises(UsageError):
        bounds.bound_y(bp, 10, units="years")


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1e-2), st.floats(1e-4, 0.1), st.floats(-1, 2), st.floats(0, 10),
       st.floats(0.01, 10), st.floats(0.01, 100), st.integers(0, 500))
def test_y_equals_eps_plus_lh_x(eps, delta, lam, R, Lh, Lz, t):
    bp = BoundParams(eps, delta, lam, R, Lh, Lz, 0.02)
    t = max(t, 1)
    assert bounds.bound_y(bp, t) == pytest.approx(eps + Lh * bounds.bound_x(bp, t), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1e-2), st.floats(1e-4, 0.1), st.floats(0, 2), st.floats(1e-3, 10),
       st.floats(0.01, 10), st.floats(0.01, 100))
def test_bound_y_strictly_increasing(eps, delta, lam, R, Lh, Lz):
    bp = BoundParams(eps, delta, lam, R, Lh, Lz, 0.02)
    b = bounds.bound_y(bp, np.arange(1, 300))
    assert np.all(np.diff(b) > 0)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["eps", "R", "L_h", "L_z", "lambda1", "delta"]), st.floats(1.01, 3.0))
def test_bound_y_monotone_in_each_parameter(name, factor):
    base = dict(eps=1e-5, delta=1e-3, lambda1=0.9, R=0.4, L_h=0.2, L_z=80.0, dt=0.02)
    bigger = dict(base, **{name: base[name] * factor})
    t = np.arange(1, 200)
    assert np.all(bounds.bound_y(BoundParams(**bigger), t)
                  >= bounds.bound_y(BoundParams(**base), t))


def test_fit_R_inverse_construction():
    bp = BoundParams(1e-5, 1e-3, 0.9, 1.0, 0.3, 50.0, 0.02)
    errs = bounds.bound_y(bp, np.arange(1, 400))
    fit = bounds.fit_R(errs, 1e-5, 1e-3, 0.9, 0.3, 50.0, 0.02)
    assert fit.R == pytest.approx(1.0, abs=1e-12) and not fit.trivial


def test_fit_R_trivial():
    fit = bounds.fit_R(np.full(10, 1e-6), 1e-5, 1e-3, 0.9, 0.3, 50.0, 0.02)
    assert fit.R == 0.0 and fit.trivial and fit.argmax is None


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-7, 1e-3))
def test_fit_R_envelope_valid_and_tight(seed, eps):
    r = np.random.default_rng(seed)
    errs = eps * np.exp(np.cumsum(r.normal(0.02, 0.2, 300)))
    assume(np.any(errs > eps))
    fit = bounds.fit_R(errs, eps, 1e-3, 0.9, 0.3, 50.0, 0.02)
    b = bounds.bound_y(BoundParams(eps, 1e-3, 0.9, fit.R, 0.3, 50.0, 0.02), np.arange(1, 301))
    assert np.all(b >= errs * (1 - 1e-12))
    k = fit.argmax - 1
    assert abs(b[k] - errs[k]) <= 1e-9 * errs[k]


def test_fit_R_input_checks():
    with pytest.raises(UsageError):
        bounds.fit_R([], 1e-5, 1e-3, 0.9, 0.3, 50.0)
    with pytest.raises(UsageError):
        bounds.fit_R([1.0], 0.0, 1e-3, 0.9, 0.3, 50.0)


def test_lipschitz_bound_base_case_and_limit():
    assert bounds.lipschitz_bound(1e-3, 0.5, 2.0, 3.0, 1) == pytest.approx(1e-3)
    lim = bounds.lipschitz_uniform_limit(1.0, 0.25, 0.25, 0.25)
    assert lim == pytest.approx(0.75 / 0.6875, rel=1e-14)
    assert lim == pytest.approx(1.0909, abs=1e-4)
    big = bounds.lipschitz_bound(1.0, 0.25, 0.25, 0.25, 10_000)
    assert big == pytest.approx(lim, rel=1e-12)
    assert bounds.lipschitz_uniform_limit(1.0, 0.9, 1.0, 1.0) is None


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2), st.floats(0, 3), st.floats(0, 3), st.integers(1, 40))
def test_lipschitz_bound_matches_partial_sum(Lx, Lh, Lz, t):
    r = Lx + Lh * Lz
    expect = 1e-4 * (1 + Lh * Lz * sum(r ** j for j in range(t - 1)))
    assert bounds.lipschitz_bound(1e-4, Lx, Lh, Lz, t) == pytest.approx(expect, rel=1e-10,
                                                                         abs=1e-300)


def test_valid_horizon_inverse_construction():
    bp = BoundParams(1e-5, 1e-3, 0.9, 1.0, 0.3, 50.0, 0.02)
    assert bounds.valid_horizon(bp, bounds.bound_y(bp, 50)) == 50


def test_valid_horizon_errors_and_sentinel():
    bp = BoundParams(1e-5, 1e-3, 0.9, 1.0, 0.3, 50.0, 0.02)
    with pytest.raises(UsageError):
        bounds.valid_horizon(bp, 1e-5)
    flat = BoundParams(1e-5, 1e-3, 0.9, 0.0, 0.3, 50.0, 0.02)
    assert bounds.valid_horizon(flat, 1.0) is None


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 1e-3), st.floats(1e-5, 0.1), st.floats(-0.5, 2), st.floats(1e-3, 100),
       st.floats(0.01, 10), st.floats(0.01, 100), st.floats(0.001, 0.1), st.floats(1, 1e6))
def test_valid_horizon_matches_scan(eps, delta, lam, R, Lh, Lz, dt, ratio):
    bp = BoundParams(eps, delta, lam, R, Lh, Lz, dt)
    sat = eps * (1 + ratio)
    t = bounds.valid_horizon(bp, sat)
    assume(t is not None and t < 200_000)
    curve = bounds.bound_y(bp, np.arange(1, t + 1))
    assert curve[-1] >= sat and (t == 1 or curve[-2] < sat)


def test_horizon_T_inverse_construction():
    lam, delta = 0.5, 0.01
    c = lam + 5 * delta
    # arg = e^c  <=>  4 eps L_z L_phi K R e^{8 delta} = (e^c - 1) / e^c
    eps = math.expm1(c) / math.exp(c) / (4 * math.exp(8 * delta))
    assert bounds.horizon_T(eps, 1.0, 1.0, 1.0, 1.0, lam, delta) == 2


def test_horizon_T_doubling_eps():
    lam, delta = 0.3, 0.002
    c = lam + 5 * delta
    drop = math.floor(math.log(2) / c)
    rng = np.random.default_rng(5)
    for eps in 10 ** rng.uniform(-12, -6, 200):
        a = bounds.horizon_T(eps, 2.0, 1.5, 3.0, 0.7, lam, delta)
        b = bounds.horizon_T(2 * eps, 2.0, 1.5, 3.0, 0.7, lam, delta)
        assert a - b in (drop, drop + 1)


def test_horizon_T_sentinel_and_checks():
    # the log argument vanishes only when lambda1+ + 5 delta = 0
    assert bounds.horizon_T(1e-3, 1, 1, 1, 1, -0.2, 0.0) == bounds.HORIZON_ZERO
    # a positive argument below one floors at a single step
    assert bounds.horizon_T(1e3, 1, 1, 1, 1, 0.1, 0.0) == 1
    with pytest.raises(UsageError):
        bounds.horizon_T(0.0, 1, 1, 1, 1, 0.1, 0.01)


def test_saturation_zero_perturbation(small_esn, lorenz_data):
    est = bounds.estimate_saturation(small_esn, lorenz_data[0].head(1500), np.zeros(3), 400, 50)
    assert est.value == 0.0 and est.settle_step == 50


def test_saturation_argument_checks(small_esn, lorenz_data):
    warm = lorenz_data[0].head(1500)
    with pytest.raises(UsageError):
        bounds.estimate_saturation(small_esn, warm, np.full(3, 1e-8), 40, 50)
    with pytest.raises(UsageError):
        bounds.estimate_saturation(small_esn, warm, np.full(3, 1e-8), 400, 5)


def test_saturation_not_reached(small_esn, lorenz_data):
    with pytest.raises(SaturationError) as info:
        bounds.estimate_saturation(small_esn, lorenz_data[0].head(1500), np.full(3, 1e-12), 60, 10)
    assert info.value.last_mean >= 0


def test_saturation_lorenz_scale(small_esn, lorenz_data):
    est = bounds.estimate_saturation(small_esn, lorenz_data[0].head(2000), np.full(3, 1e-8),
                                     20000, 500)
    assert 5 <= est.value <= 40
    truth = dynsys.integrate(dynsys.lorenz(), [1, 1, 1], 0.02, 20000).data[2000:]
    lo, hi = truth.min(axis=0), truth.max(axis=0)
    assert est.value <= np.linalg.norm(hi - lo)


def test_bound_csv_schema(tmp_path):
    bp = BoundParams(1e-5, 1e-3, 0.9, 1.0, 0.3, 50.0, 0.02)
    bounds.write_bound_csv(tmp_path / "b.csv", np.full(5, 1e-4), bp)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "step,t_model,err_norm,bound_y,log10_err,log10_bound"
    assert len(lines) == 6
