import numpy as np
import pytest

from lsmcpde import ConfigurationError, ExerciseSchedule, GridSpec, OptionSpec, simulate_paths
from lsmcpde.mlmc import (
    MlmcLevelPlan,
    coarsen,
    interpolate_surface,
    level_test,
    mlmc_coefficients,
    refine,
)
from lsmcpde.fst import ValueSurface
from lsmcpde.pricer import backward_induction, low_estimate
from lsmcpde.baselines import heston_european_cf


def test_plan_validation():
    MlmcLevelPlan((1000, 100), (64, 512), 500)
    with pytest.raises(ConfigurationError):
        MlmcLevelPlan((100, 1000), (64, 512))
    with pytest.raises(ConfigurationError):
        MlmcLevelPlan((1000, 100), (512, 64))
    with pytest.raises(ConfigurationError):
        MlmcLevelPlan((1000, 100), (64, 500))
    with pytest.raises(ConfigurationError):
        MlmcLevelPlan((1000,), (64,), clusters=2000)
    assert MlmcLevelPlan.single(10, 64).L == 0


@pytest.mark.parametrize("dim", [1, 2])
def test_refine_then_coarsen_is_identity(rng, dim):
    c, f = GridSpec(16, dim=dim), GridSpec(128, dim=dim)
    vals = rng.normal(size=c.shape)
    np.testing.assert_array_equal(coarsen(refine(vals, c, f), f, c), vals)


def test_refine_reproduces_affine():
    c, f = GridSpec(64), GridSpec(512)
    np.testing.assert_allclose(refine(2 * c.x + 1, c, f), 2 * f.x + 1, atol=1e-12)


def test_refine_bilinear_reproduces_bilinear():
    c, f = GridSpec(8, dim=2), GridSpec(32, dim=2)
    fn = lambda g: (1 + g.x[:, None]) * (2 - 3 * g.x[None, :])
    np.testing.assert_allclose(refine(fn(c), c, f), fn(f), atol=1e-12)


def test_refined_put_error_bound():
    c, f = GridSpec(64), GridSpec(512)
    put = lambda g: np.maximum(1 - np.exp(g.x), 0)
    err = np.abs(refine(put(c), c, f) - put(f))
    # Lipschitz constant of the put in x is below 1 on the left side
    assert err.max() <= (6 / 64) / 2 * 1.0


def test_interpolate_surface_types(rng):
    c, f = GridSpec(32), GridSpec(128)
    s = ValueSurface(c, rng.normal(size=32))
    np.testing.assert_array_equal(interpolate_surface(interpolate_surface(s, f), c).values, s.values)
    with pytest.raises(ConfigurationError):
        interpolate_surface(np.zeros(32), f)
    with pytest.raises(ConfigurationError):
        refine(np.zeros(32), c, GridSpec(128, -4.0, 4.0))


@pytest.fixture(scope="module")
def small_setup(heston):
    opt = OptionSpec(10.0, ExerciseSchedule(1.0, 4))
    b0 = simulate_paths(heston, opt.schedule, 600, 120, seed=8)
    b1 = simulate_paths(heston, opt.schedule, 40, 120, seed=8, stream=1)
    return opt, b0, b1


def test_equal_resolution_correction_is_zero(heston, small_setup):
    opt, b0, _ = small_setup
    g = GridSpec(64)
    plain = backward_induction(b0, heston, opt, g, 3)
    twin = backward_induction([b0, b0], heston, opt, [g, g], 3)
    for n in range(1, 4):
        np.testing.assert_allclose(twin.coeffs[n].coeffs, plain.coeffs[n].coeffs, rtol=1e-12, atol=1e-14)


def test_shared_paths_telescope_to_fine_estimator(heston, small_setup):
    opt, b0, _ = small_setup
    g0, g1 = GridSpec(32), GridSpec(128)
    fine = backward_induction(b0, heston, opt, g1, 3)
    tele = backward_induction([b0, b0], heston, opt, [g0, g1], 3)
    np.testing.assert_allclose(tele.direct.values, fine.direct.values, atol=1e-12)


def test_single_level_is_plain(heston, small_setup):
    opt, b0, _ = small_setup
    g = GridSpec(64)
    a = backward_induction(b0, heston, opt, g, 3)
    b = backward_induction([b0], heston, opt, [g], 3)
    assert a.direct.values.tobytes() == b.direct.values.tobytes()


def test_two_level_runs(heston, small_setup):
    opt, b0, b1 = small_setup
    res = backward_induction([b0, b1], heston, opt, [GridSpec(32), GridSpec(128)], 3)
    assert res.direct.grid.n_points == 128
    assert all(c.grid.n_points == 128 for c in res.coeffs[1:])
    assert 1.2 < res.direct_atm < 1.7


def test_level_mismatch_raises(heston, small_setup):
    opt, b0, b1 = small_setup
    with pytest.raises(ConfigurationError):
        mlmc_coefficients([b0, b1], [GridSpec(32)], 2, None, [np.zeros(32)], heston, 3, None, None)


def test_never_exercise_low_estimate_is_european(heston):
    # with one exercise date the policy never acts before maturity
    opt = OptionSpec(10.0, ExerciseSchedule(0.5, 1))
    fresh = [
        simulate_paths(heston, opt.schedule, 4000, 50, seed=4, stream=1000),
        simulate_paths(heston, opt.schedule, 200, 50, seed=4, stream=1001),
    ]
    grids = [GridSpec(64), GridSpec(256)]
    low = low_estimate([None], fresh, heston, opt, grids)
    cf = heston_european_cf(heston, 10.0, 0.5)
    assert abs(low.at_origin() - cf) < 0.01


def test_level_test_degenerate_flag(heston):
    rep = level_test(heston, None, [16, 32, 64], 128, 4, solver=lambda th, g: np.ones(len(th)), repeats=1)
    assert rep.degenerate and np.isnan(rep.alpha)


def test_level_test_needs_three_levels(heston):
    with pytest.raises(ConfigurationError):
        level_test(heston, None, [16, 32], 128, 4)


def test_level_test_csv(tmp_path, heston):
    put = lambda g: np.maximum(10 - 10 * np.exp(g.x), 0)
    rep = level_test(heston, put, [32, 64, 128, 256], 1024, 40, seed=2, repeats=1)
    rep.to_csv(tmp_path / "lt.csv")
    lines = (tmp_path / "lt.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 + 1
    assert rep.alpha > 1.0 and rep.beta > 2.0
