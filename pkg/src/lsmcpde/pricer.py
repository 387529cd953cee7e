"""Backward induction for Bermudan options with the hybrid regression/PDE scheme.

At every exercise date the per-path conditional solves are regressed on the
variance at that date, producing the continuation surface ``C_n(s_i, v)``.
The direct estimate is the time-zero average of the last conditional solve;
the low estimate follows the resulting exercise policy along fresh paths.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DegenerateDesignError, ParameterError
from .fst import GridSpec, ValueSurface
from .mlmc import MlmcLevelPlan, mlmc_coefficients, mlmc_low_estimate, mlmc_time_zero
from .model import ExerciseSchedule, PathBundle, simulate_paths
from .regression import CoeffSurface, TruncationConfig

__all__ = [
    "OptionSpec",
    "PolicyBoundary",
    "PricingResult",
    "backward_induction",
    "low_estimate",
    "extract_boundary",
    "LSMCPDEPricer",
]

log = logging.getLogger(__name__)

PAYOFF_KINDS = ("put", "max-put")


@dataclass(frozen=True)
class OptionSpec:
    """Bermudan put (1-d) or put on the maximum of two assets (2-d)."""

    strike: float
    schedule: ExerciseSchedule
    kind: str = "put"

    def __post_init__(self):
        if not self.strike > 0:
            raise ParameterError("strike must be positive")
        if self.kind not in PAYOFF_KINDS:
            raise ParameterError(f"payoff kind must be one of {PAYOFF_KINDS}")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "put" else 2

    def intrinsic(self, *spots) -> np.ndarray:
        if self.kind == "put":
            return np.maximum(self.strike - spots[0], 0.0)
        return np.maximum(self.strike - np.maximum(spots[0], spots[1]), 0.0)

    def payoff(self, grid: GridSpec, s0) -> np.ndarray:
        """Payoff sampled on the grid nodes, shape ``grid.shape``."""
        if grid.dim != self.dim:
            raise ConfigurationError(f"a {self.kind} payoff needs a {self.dim}-d grid")
        spots = grid.spots(s0)
        if grid.dim == 1:
            return self.intrinsic(spots[0])
        return self.intrinsic(spots[0][:, None], spots[1][None, :])


@dataclass
class PolicyBoundary:
    """Exercise indicators on a ``grid x v-lattice`` window per date.

    ``indicator[n]`` has shape ``(n_spots, n_lattice)`` over the window spots
    ``spots`` and the lattice ``lattices[n]``; ``v_star[n]`` holds the
    crossing variance per spot (NaN where ``C - h`` keeps one sign).
    """

    dates: list
    spots: np.ndarray
    grid_index: np.ndarray
    lattices: list
    indicator: list
    v_star: list

    def to_csv(self, path) -> None:
        lines = ["date,spot,v_star,v,exercise"]
        for n, lat, ind, vs in zip(self.dates, self.lattices, self.indicator, self.v_star):
            for i, s in enumerate(self.spots):
                for k, v in enumerate(lat):
                    lines.append(f"{n},{s:.10g},{vs[i]:.10g},{v:.10g},{int(ind[i, k])}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class PricingResult:
    direct: ValueSurface
    coeffs: list
    grids: list
    low: Optional[ValueSurface] = None
    timings: dict = field(default_factory=dict)

    @property
    def direct_atm(self) -> float:
        return float(self.direct.at_origin())

    @property
    def low_atm(self) -> Optional[float]:
        return None if self.low is None else float(self.low.at_origin())


def _as_levels(paths) -> list:
    return [paths] if isinstance(paths, PathBundle) else list(paths)


def _grids_for(grid, plan, model, x_min=-3.0, x_max=3.0) -> list:
    if plan is not None:
        return plan.grids(model.dim, x_min, x_max)
    if isinstance(grid, GridSpec):
        return [grid]
    return list(grid)


def backward_induction(
    paths,
    model,
    option: OptionSpec,
    grid,
    degree: int,
    trunc: Optional[TruncationConfig] = None,
    clusters: Optional[int] = None,
) -> PricingResult:
    """Continuation coefficients for dates ``1 .. M-1`` and the direct estimate.

    ``paths`` is one PathBundle (plain estimator) or one bundle per level,
    with ``grid`` the matching GridSpec or list of GridSpecs. ``clusters``
    reduces the level-0 paths at every date. Dates whose reduced design is
    degenerate fall back to the unreduced regression.
    """
    levels = _as_levels(paths)
    grids = [grid] if isinstance(grid, GridSpec) else list(grid)
    if len(levels) != len(grids):
        raise ConfigurationError("need one grid per path level")
    if option.dim != model.dim or any(g.dim != model.dim for g in grids):
        raise ConfigurationError("option, model and grid dimensions differ")
    m = levels[0].intervals
    if m != option.schedule.n_dates:
        raise ConfigurationError("paths and option disagree on the number of exercise dates")
    if any(abs(b.maturity - option.schedule.maturity) > 1e-12 for b in levels):
        raise ConfigurationError("paths and option disagree on the maturity")
    payoffs = [option.payoff(g, model.s0) for g in grids]
    coeffs: list = [None] * m
    t0 = time.perf_counter()
    for n in range(m - 1, 0, -1):
        nxt = coeffs[n + 1] if n + 1 < m else None
        try:
            coeffs[n] = mlmc_coefficients(
                levels, grids, n, nxt, payoffs, model, degree, trunc, clusters
            )
        except DegenerateDesignError:
            if clusters is None:
                raise
            log.warning("date %d: reduced design degenerate, regressing on all paths", n)
            coeffs[n] = mlmc_coefficients(levels, grids, n, nxt, payoffs, model, degree, trunc, None)
    direct = mlmc_time_zero(levels, grids, coeffs[1] if m > 1 else None, payoffs, model)
    return PricingResult(direct, coeffs, grids, timings={"direct": time.perf_counter() - t0})


def low_estimate(coeffs: Sequence, fresh, model, option: OptionSpec, grid) -> ValueSurface:
    """Value of the estimated exercise policy averaged over fresh paths."""
    levels = _as_levels(fresh)
    grids = [grid] if isinstance(grid, GridSpec) else list(grid)
    if len(levels) != len(grids):
        raise ConfigurationError("need one grid per path level")
    payoffs = [option.payoff(g, model.s0) for g in grids]
    return mlmc_low_estimate(levels, grids, coeffs, payoffs, model)


def extract_boundary(
    coeffs: Sequence,
    option: OptionSpec,
    v_band: dict,
    s0: float,
    s_window=(0.5, 1.5),
    n_lattice: int = 100,
    tol: float = 1e-10,
) -> PolicyBoundary:
    """Exercise region on a spot window times a variance lattice per date.

    ``v_band[n] = (v_lo, v_hi)`` for each date with coefficients. The window
    keeps grid spots within ``s_window`` times the strike. A cell is in the
    exercise region when ``h > 0`` and ``h >= C``.
    """
    if option.dim != 1:
        raise ConfigurationError("boundary extraction is implemented for the single-asset put")
    dates = sorted(v_band)
    first = coeffs[dates[0]]
    grid = first.grid
    spots_all = grid.spots(s0)[0]
    k = option.strike
    idx = np.flatnonzero((spots_all >= s_window[0] * k) & (spots_all <= s_window[1] * k))
    spots = spots_all[idx]
    h = option.intrinsic(spots)
    lattices, indicators, roots = [], [], []
    for n in dates:
        c = coeffs[n]
        if c is None:
            raise ConfigurationError(f"no continuation coefficients for date {n}")
        lo, hi = (float(x) for x in v_band[n])
        lattice = np.linspace(lo, hi, n_lattice)
        cont = c.evaluate(lattice)[:, idx].T  # (spots, lattice)
        indicators.append((h[:, None] > 0) & (h[:, None] >= cont))
        vs = np.full(len(idx), np.nan)
        for i, gi in enumerate(idx):
            if h[i] <= 0:
                continue
            a = c.coeffs[gi]

            def gap(v, a=a, hi_=h[i]):
                return float(c.basis.evaluate(v)[0] @ a) - hi_

            g_lo, g_hi = gap(lo), gap(hi)
            if g_lo * g_hi < 0:
                vs[i] = brentq(gap, lo, hi, xtol=tol)
        roots.append(vs)
        lattices.append(lattice)
    return PolicyBoundary(dates, spots, idx, lattices, indicators, roots)


def variance_band(bundle: PathBundle, q=(0.05, 0.95)) -> dict:
    """Per-date ``(q5, q95)`` band of the simulated variance (first asset)."""
    v = bundle.variance_at_dates()[:, :, 0]
    return {n: tuple(np.quantile(v[:, n], q)) for n in range(1, bundle.intervals)}


class LSMCPDEPricer(BaseEstimator):
    """Estimator facade over simulation, backward induction and low estimate.

    ``fit(X)`` accepts optional pre-simulated path bundles (one per level);
    otherwise paths are simulated from ``seed``. ``predict(spots)`` returns
    the direct estimate interpolated in log-spot.
    """

    def __init__(
        self,
        model=None,
        option=None,
        n_paths=(10_000,),
        resolutions=(512,),
        clusters=None,
        degree=5,
        n_steps=1200,
        seed=0,
        R=1e8,
        x_min=-3.0,
        x_max=3.0,
        low=False,
    ):
        self.model = model
        self.option = option
        self.n_paths = n_paths
        self.resolutions = resolutions
        self.clusters = clusters
        self.degree = degree
        self.n_steps = n_steps
        self.seed = seed
        self.R = R
        self.x_min = x_min
        self.x_max = x_max
        self.low = low

    def _plan(self) -> MlmcLevelPlan:
        return MlmcLevelPlan(tuple(np.atleast_1d(self.n_paths)), tuple(np.atleast_1d(self.resolutions)), self.clusters)

    def _simulate(self, plan, stream0):
        sched = self.option.schedule
        return [
            simulate_paths(self.model, sched, n, self.n_steps, self.seed, stream=stream0 + l)
            for l, n in enumerate(plan.n_paths)
        ]

    def fit(self, X=None, y=None):
        if self.model is None or self.option is None:
            raise ConfigurationError("model and option must be set before fitting")
        plan = self._plan()
        grids = plan.grids(self.model.dim, self.x_min, self.x_max)
        paths = self._simulate(plan, 0) if X is None else _as_levels(X)
        trunc = TruncationConfig(self.R)
        result = backward_induction(paths, self.model, self.option, grids, self.degree, trunc, plan.clusters)
        if self.low:
            t0 = time.perf_counter()
            fresh = self._simulate(plan, 1000)
            result.low = low_estimate(result.coeffs, fresh, self.model, self.option, grids)
            result.timings["low"] = time.perf_counter() - t0
        self.result_ = result
        self.coeffs_ = result.coeffs
        self.direct_ = result.direct
        self.low_ = result.low
        self.paths_ = paths
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        grid = self.direct_.grid
        if grid.dim != 1:
            raise ConfigurationError("predict is available for the single-asset model")
        x = np.log(np.asarray(X, dtype=float) / self.model.s0)
        return np.interp(x, grid.x, self.direct_.values)
