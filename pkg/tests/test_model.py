import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsmcpde import (
    ConfigurationError,
    ExerciseSchedule,
    HestonSpec,
    MultiHestonSpec,
    ParameterError,
    PathBundle,
    simulate_paths,
    theta_of_constant_path,
)
from lsmcpde.model import upper_cholesky


def test_cir_mean_at_maturity(heston):
    sched = ExerciseSchedule(1.0, 12)
    b = simulate_paths(heston, sched, 100_000, 120, seed=7)
    vt = b.v_end(11)[:, 0]
    se = vt.std(ddof=1) / np.sqrt(vt.size)
    # Euler bias at 120 steps is well below the statistical error at this size
    assert abs(vt.mean() - heston.variance_mean(1.0)) < 3 * se


def test_integrated_variance_mean(heston, schedule):
    b = simulate_paths(heston, schedule, 20_000, 1200, seed=3)
    iv = b.theta[:, :, 2].sum(axis=1)
    se = iv.std(ddof=1) / np.sqrt(iv.size)
    assert abs(iv.mean() - heston.integrated_variance_mean(1.0)) < 4 * se + 1e-3


def test_same_seed_is_bitwise_identical(heston, schedule):
    a = simulate_paths(heston, schedule, 300, 120, seed=11)
    b = simulate_paths(heston, schedule, 300, 120, seed=11)
    assert a.theta.tobytes() == b.theta.tobytes()


def test_chunking_does_not_change_paths(heston, schedule):
    a = simulate_paths(heston, schedule, 257, 120, seed=5, chunk_size=2048)
    b = simulate_paths(heston, schedule, 257, 120, seed=5, chunk_size=10)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_path_prefix_is_stable(heston, schedule):
    # path j depends only on (seed, stream, j)
    a = simulate_paths(heston, schedule, 50, 120, seed=5)
    b = simulate_paths(heston, schedule, 80, 120, seed=5)
    np.testing.assert_array_equal(a.theta, b.theta[:50])


def test_streams_are_independent(heston, schedule):
    a = simulate_paths(heston, schedule, 50, 120, seed=5, stream=0)
    b = simulate_paths(heston, schedule, 50, 120, seed=5, stream=1)
    assert not np.allclose(a.theta, b.theta)


@pytest.mark.parametrize("dim", [1, 2])
def test_theta_chaining(heston, multi_heston, schedule, dim):
    spec = heston if dim == 1 else multi_heston
    b = simulate_paths(spec, schedule, 200, 240, seed=2)
    for n in range(schedule.n_dates - 1):
        np.testing.assert_array_equal(b.v_end(n), b.v_start(n + 1))
    np.testing.assert_allclose(b.v_start(0), np.broadcast_to(np.atleast_1d(spec.v0), (200, dim)))


@pytest.mark.parametrize("dim", [1, 2])
def test_variance_and_integrals_nonnegative(heston, multi_heston, schedule, dim):
    spec = heston if dim == 1 else multi_heston
    b = simulate_paths(spec, schedule, 500, 240, seed=9)
    v = b.variance_at_dates()
    assert np.all(v >= 0)
    iv = b.theta[:, :, [2]] if dim == 1 else b.theta[:, :, 4:7]
    assert np.all(iv >= 0)


def test_theta_of_constant_path_values():
    np.testing.assert_allclose(theta_of_constant_path(0.16, 1 / 12), [0.16, 0.0, 0.16 / 12, 0.16])
    np.testing.assert_array_equal(theta_of_constant_path(0.0, 0.1), [0.0, 0.0, 0.0, 0.0])


def test_theta_of_constant_path_2d_cross_integral():
    th = theta_of_constant_path((0.2, 0.2), 0.5, dim=2)
    assert th.shape == (9,)
    assert th[6] == pytest.approx(0.2 * 0.5)
    np.testing.assert_array_equal(th[2:4], 0.0)


def test_zero_vol_of_vol_is_deterministic():
    spec = HestonSpec(0.02, 5.0, 0.16, 1e-12, 0.1, 0.16, 10.0)
    b = simulate_paths(spec, ExerciseSchedule(1.0, 4), 10, 40, seed=1)
    np.testing.assert_allclose(b.theta[:, :, 0], 0.16, rtol=1e-9)
    np.testing.assert_allclose(b.theta[:, :, 2], 0.16 * 0.25, rtol=1e-9)


def test_bad_step_count(heston):
    with pytest.raises(ConfigurationError):
        simulate_paths(heston, ExerciseSchedule(1.0, 12), 10, 1000, seed=0)


@pytest.mark.parametrize(
    "kw",
    [dict(kappa=-1.0), dict(theta=-0.1), dict(eta=-0.2), dict(rho=1.5), dict(v0=-0.01), dict(s0=0.0)],
)
def test_parameter_validation(kw):
    base = dict(r=0.02, kappa=5.0, theta=0.16, eta=0.9, rho=0.1, v0=0.15, s0=10.0)
    base.update(kw)
    with pytest.raises(ParameterError):
        HestonSpec(**base)


def test_multi_heston_rejects_indefinite_correlation():
    rho = np.full((4, 4), 0.99)
    rho[0, 1] = rho[1, 0] = -0.99
    np.fill_diagonal(rho, 1.0)
    with pytest.raises(ParameterError):
        MultiHestonSpec(0.02, (1, 1), (0.1, 0.1), (0.3, 0.3), (0.1, 0.1), (10, 10), rho)


def test_upper_cholesky_pattern(multi_heston):
    a = upper_cholesky(multi_heston.rho)
    np.testing.assert_allclose(a @ a.T, multi_heston.rho, atol=1e-12)
    np.testing.assert_allclose(np.tril(a, -1), 0.0, atol=1e-15)
    assert a[3, 3] == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-0.6, 0.6), min_size=6, max_size=6),
)
def test_upper_cholesky_reproduces_random_correlations(upper):
    rho = np.eye(4)
    rho[np.triu_indices(4, 1)] = upper
    rho = np.triu(rho) + np.triu(rho, 1).T
    if np.linalg.eigvalsh(rho).min() < 1e-6:
        return
    a = upper_cholesky(rho)
    np.testing.assert_allclose(a @ a.T, rho, atol=1e-10)


def test_bundle_roundtrip(tmp_path, heston, schedule):
    b = simulate_paths(heston, schedule, 40, 120, seed=4, stream=3)
    p = tmp_path / "paths.bin"
    b.save(p)
    c = PathBundle.load(p)
    np.testing.assert_array_equal(b.theta, c.theta)
    assert (c.dim, c.seed, c.stream, c.n_steps, c.maturity) == (1, 4, 3, 120, 1.0)


def test_bundle_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nonsense")
    with pytest.raises(ConfigurationError):
        PathBundle.load(p)
