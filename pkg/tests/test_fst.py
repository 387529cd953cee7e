import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from lsmcpde import (
    ConfigurationError,
    ExerciseSchedule,
    GridSpec,
    HestonSpec,
    NumericError,
    ParameterError,
    ValueSurface,
    build_psi,
    conditional_expectation_over_interval,
    fst_step,
    simulate_paths,
    theta_of_constant_path,
)
from lsmcpde.baselines import heston_european_cf


def bs_put(s, k, r, sigma, t):
    d1 = (np.log(s / k) + (r + 0.5 * sigma**2) * t) / (sigma * np.sqrt(t))
    d2 = d1 - sigma * np.sqrt(t)
    return k * np.exp(-r * t) * norm.cdf(-d2) - s * norm.cdf(-d1)


def test_grid_layout():
    g = GridSpec(64)
    assert g.dx == pytest.approx(6 / 64)
    assert g.x[g.origin] == 0.0
    assert g.x[0] == -3.0 and g.x[-1] < 3.0
    assert GridSpec(64, dim=2).shape == (64, 64)


@pytest.mark.parametrize("n", [0, 3, 100])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ParameterError):
        GridSpec(n)


def test_psi_direct_substitution():
    m = HestonSpec(0.02, 5.0, 0.16, 0.9, 0.1, 0.15, 10.0)
    g = GridSpec(32)
    dt = 1 / 12
    psi = build_psi(theta_of_constant_path(0.16, dt), m, g, dt)
    w = g.omega
    want = 1j * w * (0.02 - 0.08) * dt - 0.5 * w**2 * 0.99 * 0.16 * dt
    np.testing.assert_allclose(psi, want, rtol=1e-13, atol=1e-15)


def test_psi_vanishes_at_zero_frequency(heston, schedule):
    b = simulate_paths(heston, schedule, 20, 120, seed=1)
    psi = build_psi(b.theta[:, 3], heston, GridSpec(64), schedule.dt)
    assert np.all(psi[:, 0] == 0)


def test_psi_2d_cross_term(multi_heston):
    g = GridSpec(16, dim=2)
    dt, c = 0.25, 0.2
    th = theta_of_constant_path((c, c), dt, dim=2)
    psi = build_psi(th, multi_heston, g, dt)
    a = multi_heston.chol
    w1, w2 = g.omega[:, None], g.omega[None, :]
    drift = 1j * (w1 + w2) * (multi_heston.r * dt - 0.5 * c * dt)
    quad = -0.5 * (a[0, 0] ** 2 + a[0, 1] ** 2) * w1**2 * c * dt - 0.5 * a[1, 1] ** 2 * w2**2 * c * dt
    cross = -a[0, 1] * a[1, 1] * w1 * w2 * c * dt
    np.testing.assert_allclose(psi, drift + quad + cross, atol=1e-12)
    assert psi[0, 0] == 0


def test_psi_rejects_wrong_layout(heston):
    with pytest.raises(ConfigurationError):
        build_psi(np.zeros(9), heston, GridSpec(32), 0.1)


@pytest.mark.parametrize("dim", [1, 2])
def test_constants_are_preserved(heston, multi_heston, schedule, dim):
    spec = heston if dim == 1 else multi_heston
    g = GridSpec(32, dim=dim)
    b = simulate_paths(spec, schedule, 8, 120, seed=2)
    psi = build_psi(b.theta[:, 5], spec, g, schedule.dt)
    out = fst_step(np.ones(g.shape), psi, dim)
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_batch_equals_loop(heston, schedule):
    g = GridSpec(64)
    b = simulate_paths(heston, schedule, 64, 120, seed=3)
    psi = build_psi(b.theta[:, 2], heston, g, schedule.dt)
    terminal = np.maximum(1 - np.exp(g.x), 0)
    batch = fst_step(terminal, psi)
    for j in range(0, 64, 13):
        np.testing.assert_allclose(batch[j], fst_step(terminal, psi[j]), atol=1e-14)


def test_frozen_path_matches_black_scholes():
    m = HestonSpec(0.02, 5.0, 0.16, 0.9, 0.0, 0.16, 10.0)
    g = GridSpec(1024)
    dt = 1 / 12
    payoff = np.maximum(10 - 10 * np.exp(g.x), 0)
    out = fst_step(payoff, build_psi(theta_of_constant_path(0.16, dt), m, g, dt))
    undiscounted = np.exp(0.02 * dt) * bs_put(10.0, 10.0, 0.02, 0.4, dt)
    assert out[g.origin] == pytest.approx(undiscounted, abs=1e-4)


def test_discounted_conditional_expectation():
    m = HestonSpec(0.03, 5.0, 0.16, 0.9, 0.0, 0.09, 10.0)
    g = GridSpec(1024)
    dt = 0.5
    payoff = ValueSurface(g, np.maximum(10 - 10 * np.exp(g.x), 0))
    out = conditional_expectation_over_interval(payoff, theta_of_constant_path(0.09, dt), m, g, dt)
    assert out.at_origin() == pytest.approx(bs_put(10.0, 10.0, 0.03, 0.3, dt), abs=1e-4)


def test_constant_payoff_zero_rate():
    m = HestonSpec(0.0, 5.0, 0.16, 0.9, 0.1, 0.15, 10.0)
    g = GridSpec(64)
    out = conditional_expectation_over_interval(np.full(64, 2.5), theta_of_constant_path(0.2, 0.3), m, g, 0.3)
    np.testing.assert_allclose(out.values, 2.5, atol=1e-12)


def test_average_over_paths_matches_cf(heston):
    dt = 1 / 12
    b = simulate_paths(heston, ExerciseSchedule(dt, 1), 10_000, 100, seed=21)
    g = GridSpec(512)
    payoff = np.maximum(10 - 10 * np.exp(g.x), 0)
    vals = conditional_expectation_over_interval(payoff, b.theta[:, 0], heston, g, dt).values[:, g.origin]
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    cf = heston_european_cf(heston, 10.0, dt)
    assert abs(vals.mean() - cf) < 3 * se


def test_non_finite_input_raises():
    g = GridSpec(16)
    bad = np.ones(16)
    bad[3] = np.nan
    with pytest.raises(NumericError):
        fst_step(bad, np.zeros(16, dtype=complex))


def test_grid_mismatch_raises():
    with pytest.raises(ConfigurationError):
        fst_step(np.ones(16), np.zeros(32, dtype=complex))


@settings(max_examples=30, deadline=None)
@given(
    v=st.floats(0.01, 0.8),
    r=st.floats(-0.02, 0.08),
    dt=st.floats(0.02, 0.5),
    k=st.floats(8.0, 12.0),
)
def test_frozen_path_property(v, r, dt, k):
    m = HestonSpec(r, 1.0, 0.1, 0.5, 0.0, v, 10.0)
    g = GridSpec(2048, -4.0, 4.0)
    payoff = np.maximum(k - 10 * np.exp(g.x), 0)
    out = conditional_expectation_over_interval(payoff, theta_of_constant_path(v, dt), m, g, dt)
    assert out.at_origin() == pytest.approx(bs_put(10.0, k, r, np.sqrt(v), dt), abs=2e-4)
