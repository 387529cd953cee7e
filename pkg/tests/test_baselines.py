import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsmcpde import ConfigurationError, HestonSpec
from lsmcpde.baselines import (
    FdConfig,
    fd_bermudan_2d,
    fd_stable_steps,
    heston_call_gil_pelaez,
    heston_european_cf,
    lsmc_full,
    simulate_joint,
)


def test_cf_put_call_parity(heston):
    call = heston_european_cf(heston, 11.0, 1.0, kind="call")
    put = heston_european_cf(heston, 11.0, 1.0)
    assert call - put == pytest.approx(10.0 - 11.0 * np.exp(-0.02), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(
    k=st.floats(7.0, 13.0),
    t=st.floats(0.1, 2.0),
    rho=st.floats(-0.8, 0.8),
    eta=st.floats(0.1, 1.0),
)
def test_two_cf_routes_agree(k, t, rho, eta):
    m = HestonSpec(0.02, 3.0, 0.1, eta, rho, 0.12, 10.0)
    lewis = heston_european_cf(m, k, t, kind="call")
    gp = heston_call_gil_pelaez(m, k, t)
    assert lewis == pytest.approx(gp, abs=1e-6)


def test_cf_deterministic_limit():
    m = HestonSpec(0.03, 5.0, 1e-8, 1e-6, 0.0, 1e-8, 10.0)
    for k in (9.0, 10.5, 12.0):
        want = max(np.exp(-0.03) * k - 10.0, 0.0)
        assert heston_european_cf(m, k, 1.0) == pytest.approx(want, abs=1e-4)


def test_stable_step_count(heston):
    cfg = FdConfig(512, 128)
    n = fd_stable_steps(heston, cfg, 1.0, 12)
    assert n % 12 == 0 and n == 281_316


def test_fd_refuses_unstable_steps(heston):
    with pytest.raises(ConfigurationError):
        fd_bermudan_2d(heston, 10.0, 1.0, 12, FdConfig(512, 128, n_t=100_000))


def test_fd_european_matches_cf(heston):
    fd = fd_bermudan_2d(heston, 10.0, 1.0, 12, FdConfig(128, 64), early_exercise=False)
    assert abs(fd.value_at(10.0, 0.15) - heston_european_cf(heston, 10.0, 1.0)) <= 2e-3


def test_fd_bermudan_properties(heston):
    cfg = FdConfig(128, 64)
    berm = fd_bermudan_2d(heston, 10.0, 1.0, 12, cfg)
    euro = fd_bermudan_2d(heston, 10.0, 1.0, 12, cfg, early_exercise=False)
    assert berm.value_at(10.0, 0.15) > euro.value_at(10.0, 0.15)
    # near S = 0 the value is the intrinsic one
    np.testing.assert_allclose(berm.values[1, :], 10.0 - berm.s[1], atol=1e-9)
    assert np.all(berm.values >= np.maximum(10.0 - berm.s, 0)[:, None] - 1e-12)
    ind = berm.exercise_indicator(6, np.array([2.0, 9.9, 12.0]), np.array([0.1, 0.2]), 10.0)
    assert ind[0].all() and not ind[2].any()


def test_joint_simulation_martingale(heston):
    s, v = simulate_joint(heston, 20_000, 4, 1.0, 120, seed=5)
    disc = s[:, -1, 0] * np.exp(-heston.r)
    se = disc.std(ddof=1) / np.sqrt(disc.size)
    assert abs(disc.mean() - heston.s0) < 4 * se
    assert np.all(v >= 0)


def test_lsmc_zero_payoff(heston):
    out = lsmc_full(heston, 1e-8, 1.0, 12, 2000, 3, 120, seed=1, low_paths=2000)
    assert out.direct == 0.0 and out.low == 0.0


def test_lsmc_plausible(heston):
    out = lsmc_full(heston, 10.0, 1.0, 12, 20_000, 3, 120, seed=2, low_paths=20_000)
    assert 1.40 < out.low < 1.50 and 1.40 < out.direct < 1.50
    # out of the money the policy never exercises
    ind = out.exercise_indicator(6, np.array([[10.5], [14.0]]), np.array([[0.15], [0.15]]))
    assert not ind.any()
