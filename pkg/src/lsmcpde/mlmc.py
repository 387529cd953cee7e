"""Multilevel (multi-grid) estimation of regression coefficients and prices.

Level 0 solves many conditional PDEs on a coarse grid; every correction
level ``l >= 1`` solves few PDEs on both grid ``l`` and grid ``l - 1`` along
the same paths, so the difference has small variance. Sums are accumulated
at their native resolution and only the ``d_B`` aggregated surfaces are
interpolated to the finest grid, which keeps the number of interpolations
independent of the path count.

The plain (single level) estimator is the ``L = 0`` case of the same code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .clustering import cluster_paths, clustered_weights
from .exceptions import ConfigurationError, NumericError
from .fst import GridSpec, ValueSurface, build_psi, fst_step
from .model import ExerciseSchedule, PathBundle, simulate_paths
from .regression import (
    CoeffSurface,
    MonomialBasis,
    RegressionAccumulator,
    TruncationConfig,
    gram_matrix,
)

__all__ = [
    "MlmcLevelPlan",
    "LevelTestReport",
    "interpolate_surface",
    "refine",
    "coarsen",
    "solve_rows",
    "mlmc_coefficients",
    "mlmc_time_zero",
    "mlmc_low_estimate",
    "level_test",
]

_CHUNK_CELLS = 1 << 22


def _is_pow2(n: int) -> bool:
    return n >= 2 and not n & (n - 1)


@dataclass(frozen=True)
class MlmcLevelPlan:
    """Per-level path counts and grid resolutions (level 0 first)."""

    n_paths: tuple
    resolutions: tuple
    clusters: Optional[int] = None

    def __post_init__(self):
        n_paths = tuple(int(x) for x in np.atleast_1d(self.n_paths))
        res = tuple(int(x) for x in np.atleast_1d(self.resolutions))
        object.__setattr__(self, "n_paths", n_paths)
        object.__setattr__(self, "resolutions", res)
        if len(n_paths) != len(res) or not n_paths:
            raise ConfigurationError("need one path count per grid resolution")
        if min(n_paths) < 1:
            raise ConfigurationError("every level needs at least one path")
        if not all(_is_pow2(r) for r in res):
            raise ConfigurationError("grid resolutions must be powers of two")
        if any(a <= b for a, b in zip(n_paths, n_paths[1:])):
            raise ConfigurationError("path counts must strictly decrease with the level")
        if any(a >= b for a, b in zip(res, res[1:])):
            raise ConfigurationError("grid resolutions must strictly increase with the level")
        if self.clusters is not None and not 1 <= self.clusters <= n_paths[0]:
            raise ConfigurationError("level-0 cluster count must lie in [1, n_paths[0]]")

    @classmethod
    def single(cls, n_paths: int, resolution: int, clusters: Optional[int] = None):
        return cls((n_paths,), (resolution,), clusters)

    @property
    def L(self) -> int:
        return len(self.resolutions) - 1

    def grids(self, dim: int = 1, x_min: float = -3.0, x_max: float = 3.0) -> list:
        return [GridSpec(r, x_min, x_max, dim) for r in self.resolutions]


# -- interpolation between nested grids -------------------------------------


def _ratio(src: GridSpec, dst: GridSpec) -> int:
    if (src.x_min, src.x_max, src.dim) != (dst.x_min, dst.x_max, dst.dim):
        raise ConfigurationError("grids must share their domain and dimension to be nested")
    big, small = max(src.n_points, dst.n_points), min(src.n_points, dst.n_points)
    if big % small:
        raise ConfigurationError("grid resolutions are not nested")
    return big // small


def _refine_axis(values: np.ndarray, ratio: int, axis: int) -> np.ndarray:
    values = np.moveaxis(values, axis, -1)
    n = values.shape[-1]
    pos = np.arange(n * ratio) / ratio
    left = np.minimum(pos.astype(int), n - 2)
    t = pos - left
    # beyond the last coarse node the line through the last two nodes is extended
    out = (1 - t) * values[..., left] + t * values[..., left + 1]
    return np.moveaxis(out, -1, axis)


def refine(values: np.ndarray, src: GridSpec, dst: GridSpec) -> np.ndarray:
    """Linear (bilinear in 2-d) interpolation over the trailing grid axes."""
    ratio = _ratio(src, dst)
    if ratio == 1:
        return values
    for axis in range(-src.dim, 0):
        values = _refine_axis(values, ratio, axis)
    return values


def coarsen(values: np.ndarray, src: GridSpec, dst: GridSpec) -> np.ndarray:
    """Injection: keep the fine nodes that coincide with coarse ones."""
    ratio = _ratio(src, dst)
    if ratio == 1:
        return values
    index = (...,) + (slice(None, None, ratio),) * src.dim
    return values[index]


def _resample(values, src: GridSpec, dst: GridSpec):
    if dst.n_points >= src.n_points:
        return refine(values, src, dst)
    return coarsen(values, src, dst)


def interpolate_surface(surface, to_grid: GridSpec, from_grid: Optional[GridSpec] = None):
    """Move a ValueSurface, CoeffSurface or raw array between nested grids."""
    if isinstance(surface, ValueSurface):
        return ValueSurface(to_grid, _resample(surface.values, surface.grid, to_grid))
    if isinstance(surface, CoeffSurface):
        src = surface.grid
        d = surface.basis.n_functions
        stacked = np.moveaxis(surface.coeffs.reshape(*src.shape, d), -1, 0)
        moved = _resample(stacked, src, to_grid)
        coeffs = np.moveaxis(moved, 0, -1).reshape(to_grid.size, d)
        return CoeffSurface(to_grid, np.ascontiguousarray(coeffs), surface.basis, surface.date)
    if from_grid is None:
        raise ConfigurationError("raw arrays need their source grid")
    return _resample(np.asarray(surface, dtype=float), from_grid, to_grid)


# -- conditional solves -----------------------------------------------------


def _chunk_rows(grid: GridSpec) -> int:
    return max(1, _CHUNK_CELLS // grid.size)


def solve_rows(terminal, theta_rows, model, grid: GridSpec, dt: float) -> np.ndarray:
    """Discounted one-interval solves for a block of paths.

    ``terminal`` is either one shared surface of shape ``grid.shape`` or one
    surface per row.
    """
    psi = build_psi(theta_rows, model, grid, dt)
    out = np.exp(-model.r * dt) * fst_step(terminal, psi, grid.dim)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite conditional solution")
    return out


def _terminal_fn(payoff: np.ndarray, coeffs: Optional[CoeffSurface]) -> Callable:
    """Terminal conditions ``max(h, C(s, v_end))`` for a block of paths."""
    if coeffs is None:
        return lambda v_end: payoff
    return lambda v_end: np.maximum(payoff, coeffs.evaluate(v_end))


@dataclass
class _Level:
    """Per-date inputs of one level: path statistics and optional weights."""

    theta: np.ndarray
    weights: Optional[np.ndarray] = None


def _accumulate(level: _Level, grids, terminals, model, dt, basis, dim):
    """Weighted sums ``sum_j w_j phi(v_j) P_j`` (or ``sum_j w_j P_j`` when
    ``basis`` is None) at each of the given grids along the same rows."""
    theta = level.theta
    totals = [None] * len(grids)
    accs = [RegressionAccumulator(basis, g.size) if basis is not None else None for g in grids]
    step = min(_chunk_rows(g) for g in grids)
    for start in range(0, len(theta), step):
        rows = theta[start : start + step]
        w = None if level.weights is None else level.weights[start : start + step]
        v_start = rows[:, :dim]
        v_end = rows[:, -dim:]
        for k, g in enumerate(grids):
            u = solve_rows(terminals[k](v_end), rows, model, g, dt)
            if basis is not None:
                accs[k].add(u.reshape(len(rows), -1), v_start, w)
            else:
                part = u.sum(axis=0) if w is None else np.tensordot(w, u, axes=1)
                totals[k] = part if totals[k] is None else totals[k] + part
    if basis is not None:
        return [a.total.reshape(basis.n_functions, *g.shape) for a, g in zip(accs, grids)]
    return totals


def _level0(theta_n: np.ndarray, clusters: Optional[int]) -> _Level:
    if clusters is None or clusters >= len(theta_n):
        return _Level(theta_n)
    assignment = cluster_paths(theta_n, clusters)
    return _Level(assignment.representatives, clustered_weights(assignment))


def _combine(levels, grids, n_paths, make_terminals, model, dt, basis, dim, clusters):
    """``S_0 + sum_l (N_0 / N_l) (S_l^fine - S_l^coarse)`` on the finest grid."""
    fine = grids[-1]
    lvl0 = _level0(levels[0], clusters)
    (s0,) = _accumulate(lvl0, [grids[0]], [make_terminals(0)], model, dt, basis, dim)
    total = refine(s0, grids[0], fine)
    for l in range(1, len(grids)):
        sf, sc = _accumulate(
            _Level(levels[l]), [grids[l], grids[l - 1]], [make_terminals(l), make_terminals(l - 1)],
            model, dt, basis, dim,
        )
        scale = n_paths[0] / n_paths[l]
        total = total + scale * (refine(sf, grids[l], fine) - refine(sc, grids[l - 1], fine))
    return total


def _check_levels(bundles: Sequence[PathBundle], grids: Sequence[GridSpec]):
    if len(bundles) != len(grids):
        raise ConfigurationError("need one path bundle per level")
    m = bundles[0].intervals
    if any(b.intervals != m for b in bundles):
        raise ConfigurationError("all levels must share the exercise schedule")


def mlmc_coefficients(
    bundles: Sequence[PathBundle],
    grids: Sequence[GridSpec],
    date: int,
    next_coeffs: Optional[CoeffSurface],
    payoffs: Sequence[np.ndarray],
    model,
    degree: int,
    trunc: Optional[TruncationConfig] = None,
    clusters: Optional[int] = None,
) -> CoeffSurface:
    """Regression coefficients for exercise date ``date`` on the finest grid.

    ``next_coeffs`` holds the date ``date + 1`` continuation on the finest
    grid (``None`` at the last interval, where the terminal is the payoff).
    The Gram matrix comes from all level-0 paths and is not affected by the
    clustering of level 0.
    """
    _check_levels(bundles, grids)
    trunc = trunc or TruncationConfig()
    dim = model.dim
    dt = bundles[0].dt
    v0 = bundles[0].v_start(date)
    basis = trunc.basis_for(v0, degree, dim)
    gram = gram_matrix(v0, basis, trunc).check()
    local = [None if next_coeffs is None else interpolate_surface(next_coeffs, g) for g in grids]

    def make_terminals(l):
        return _terminal_fn(payoffs[l], local[l])

    levels = [b.theta[:, date] for b in bundles]
    n_paths = [b.n_paths for b in bundles]
    total = _combine(levels, grids, n_paths, make_terminals, model, dt, basis, dim, clusters)
    fine = grids[-1]
    flat = total.reshape(basis.n_functions, fine.size)
    coeffs = (gram.inverse @ (flat / gram.n_samples)).T
    return CoeffSurface(fine, coeffs, basis, date)


def mlmc_time_zero(
    bundles: Sequence[PathBundle],
    grids: Sequence[GridSpec],
    next_coeffs: Optional[CoeffSurface],
    payoffs: Sequence[np.ndarray],
    model,
) -> ValueSurface:
    """Direct estimate ``max(h, mean_j e^{-r dt} E[V_1 | path j])`` on the
    finest grid. No regression is needed since every path starts at ``v0``."""
    _check_levels(bundles, grids)
    local = [None if next_coeffs is None else interpolate_surface(next_coeffs, g) for g in grids]

    def make_terminals(l):
        return _terminal_fn(payoffs[l], local[l])

    levels = [b.theta[:, 0] for b in bundles]
    n_paths = [b.n_paths for b in bundles]
    total = _combine(levels, grids, n_paths, make_terminals, model, bundles[0].dt, None, model.dim, None)
    mean = total / n_paths[0]
    return ValueSurface(grids[-1], np.maximum(payoffs[-1], mean))


def _low_rows(theta, coeffs_local, payoff, model, grid, dt):
    """Full-horizon conditional values of following the exercise policy,
    summed over the given rows."""
    dim = model.dim
    m = theta.shape[1]
    total = np.zeros(grid.shape)
    step = _chunk_rows(grid)
    itm = payoff > 0
    for start in range(0, len(theta), step):
        rows = theta[start : start + step]
        value = np.broadcast_to(payoff, (len(rows),) + grid.shape)
        for n in range(m - 1, 0, -1):
            u = solve_rows(value, rows[:, n], model, grid, dt)
            cont = coeffs_local[n].evaluate(rows[:, n, :dim])
            exercise = itm & (payoff >= cont)
            value = np.where(exercise, payoff, u)
        total += solve_rows(value, rows[:, 0], model, grid, dt).sum(axis=0)
    return total


def mlmc_low_estimate(
    bundles: Sequence[PathBundle],
    grids: Sequence[GridSpec],
    coeffs: Sequence[Optional[CoeffSurface]],
    payoffs: Sequence[np.ndarray],
    model,
) -> ValueSurface:
    """Multilevel average over fresh paths of the value of the estimated
    policy. ``coeffs[n]`` is the date-``n`` continuation on the finest grid
    for ``n = 1 .. M-1`` (``coeffs[0]`` is unused)."""
    _check_levels(bundles, grids)
    m = bundles[0].intervals
    if len(coeffs) < m or any(coeffs[n] is None for n in range(1, m)):
        raise ConfigurationError("continuation coefficients are missing for some exercise date")
    fine = grids[-1]
    dt = bundles[0].dt
    local = [[None] + [interpolate_surface(coeffs[n], g) for n in range(1, m)] for g in grids]
    n0 = bundles[0].n_paths
    total = refine(_low_rows(bundles[0].theta, local[0], payoffs[0], model, grids[0], dt), grids[0], fine)
    for l in range(1, len(grids)):
        th = bundles[l].theta
        sf = _low_rows(th, local[l], payoffs[l], model, grids[l], dt)
        sc = _low_rows(th, local[l - 1], payoffs[l - 1], model, grids[l - 1], dt)
        scale = n0 / bundles[l].n_paths
        total = total + scale * (refine(sf, grids[l], fine) - refine(sc, grids[l - 1], fine))
    return ValueSurface(fine, total / n0)


# -- level test -------------------------------------------------------------


@dataclass
class LevelTestReport:
    levels: np.ndarray
    resolutions: np.ndarray
    log2_bias: np.ndarray
    log2_var: np.ndarray
    log2_cost: np.ndarray
    alpha: float
    beta: float
    gamma: float
    r2: dict = field(default_factory=dict)
    degenerate: bool = False

    def rows(self) -> list:
        return [
            {
                "level": int(l),
                "resolution": int(r),
                "log2_bias": float(b),
                "log2_var": float(v),
                "log2_cost": float(c),
            }
            for l, r, b, v, c in zip(
                self.levels, self.resolutions, self.log2_bias, self.log2_var, self.log2_cost
            )
        ]

    def to_csv(self, path) -> None:
        lines = ["level,resolution,log2_bias,log2_var,log2_cost"]
        for row in self.rows():
            lines.append(
                f"{row['level']},{row['resolution']},{row['log2_bias']:.10g},"
                f"{row['log2_var']:.10g},{row['log2_cost']:.10g}"
            )
        lines.append(
            f"fit,alpha={self.alpha:.6g},beta={self.beta:.6g},gamma={self.gamma:.6g},"
            f"r2_bias={self.r2.get('alpha', float('nan')):.6g},"
            f"r2_var={self.r2.get('beta', float('nan')):.6g},"
            f"r2_cost={self.r2.get('gamma', float('nan')):.6g}"
        )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _ols(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(min(max(r2, 0.0), 1.0))


def _single_period_prices(theta, model, grid, payoff, dt):
    return solve_rows(payoff, theta, model, grid, dt)[(slice(None),) + (grid.origin,) * grid.dim]


def level_test(
    model,
    payoff_fn: Callable[[GridSpec], np.ndarray],
    resolutions: Sequence[int],
    reference_res: int,
    n_trials: int,
    seed: int = 0,
    maturity: float = 1.0,
    n_steps: int = 100,
    repeats: int = 3,
    x_min: float = -3.0,
    x_max: float = 3.0,
    solver: Optional[Callable] = None,
) -> LevelTestReport:
    """Bias, variance and cost slopes of single-period FST prices at ``S0``.

    One simulated variance path per trial over ``[0, maturity]``. ``P^l`` is
    the price on grid ``resolutions[l]``, the bias is measured against the
    ``reference_res`` solution and ``Y_l = P^l - P^{l-1}`` (the lowest level
    pairs with a grid of half its resolution). ``solver(theta, grid)`` can
    replace the FST price, e.g. to check the degenerate case.
    """
    res = [int(r) for r in resolutions]
    if len(res) < 3:
        raise ConfigurationError("a slope fit needs at least three levels")
    if any(a >= b for a, b in zip(res, res[1:])) or reference_res <= res[-1]:
        raise ConfigurationError("resolutions must increase and stay below the reference")
    if n_trials < 2:
        raise ConfigurationError("need at least two trials")
    bundle = simulate_paths(model, ExerciseSchedule(maturity, 1), n_trials, n_steps, seed)
    theta = bundle.theta[:, 0]
    dim = model.dim

    def price(n_points):
        grid = GridSpec(n_points, x_min, x_max, dim)
        if solver is not None:
            return np.asarray(solver(theta, grid), dtype=float)
        return _single_period_prices(theta, model, grid, payoff_fn(grid), maturity)

    ref = price(reference_res)
    p = {r: price(r) for r in res}
    p[res[0] // 2] = price(res[0] // 2)
    bias = np.array([abs(np.mean(p[r] - ref)) for r in res])
    prev = [res[0] // 2] + res[:-1]
    var = np.array([np.var(p[r] - p[q], ddof=1) for r, q in zip(res, prev)])
    cost = np.empty(len(res))
    for k, (r, q) in enumerate(zip(res, prev)):
        times = []
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            price(r)
            price(q)
            times.append(time.perf_counter() - t0)
        cost[k] = np.median(times) / n_trials
    lv = np.log2(np.array(res, dtype=float))
    levels = lv - lv[0]
    log2_cost = np.log2(cost)
    if np.all(var == 0) and np.all(bias == 0):
        nan = float("nan")
        return LevelTestReport(
            levels, np.array(res), np.full(len(res), -np.inf), np.full(len(res), -np.inf),
            log2_cost, nan, nan, _ols(levels, log2_cost)[0], {}, True,
        )
    with np.errstate(divide="ignore"):
        log2_bias = np.log2(bias)
        log2_var = np.log2(var)
    if not (np.all(np.isfinite(log2_bias)) and np.all(np.isfinite(log2_var))):
        raise NumericError("zero bias or variance at some level; slopes are undefined")
    a, ra = _ols(levels, log2_bias)
    b, rb = _ols(levels, log2_var)
    g, rg = _ols(levels, log2_cost)
    return LevelTestReport(
        levels, np.array(res), log2_bias, log2_var, log2_cost, -a, -b, g,
        {"alpha": ra, "beta": rb, "gamma": rg},
    )
