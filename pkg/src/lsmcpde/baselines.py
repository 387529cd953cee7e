"""Reference methods: Heston CF European pricer, explicit finite differences
for the single-asset Heston PDE, and plain least-squares Monte Carlo."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .exceptions import ConfigurationError, DegenerateDesignError, NumericError, ParameterError
from .model import HestonSpec, MultiHestonSpec, path_normals

__all__ = [
    "heston_cf",
    "heston_european_cf",
    "heston_call_gil_pelaez",
    "FdConfig",
    "FdResult",
    "fd_stable_steps",
    "fd_bermudan_2d",
    "simulate_joint",
    "LsmcResult",
    "lsmc_full",
]


# -- characteristic function oracle -----------------------------------------


def heston_cf(u, model: HestonSpec, maturity: float, v0: Optional[float] = None):
    """``E[exp(i u X_T)]`` for ``X_T = log(S_T / S_0) - r T`` (rotation-safe form)."""
    v0 = model.v0 if v0 is None else v0
    k, th, eta, rho = model.kappa, model.theta, model.eta, model.rho
    u = np.asarray(u, dtype=complex)
    beta = k - 1j * rho * eta * u
    d = np.sqrt(beta * beta + eta * eta * u * (u + 1j))
    g = (beta - d) / (beta + d)
    e = np.exp(-d * maturity)
    c = k * th / eta**2 * ((beta - d) * maturity - 2.0 * np.log((1 - g * e) / (1 - g)))
    dd = (beta - d) / eta**2 * (1 - e) / (1 - g * e)
    return np.exp(c + dd * v0)


def _quad(f, what):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, 0.0, np.inf, limit=1000, epsabs=1e-12, epsrel=1e-12)
    if not np.isfinite(val) or err > 1e-8:
        raise NumericError(f"{what}: quadrature did not converge (error estimate {err:.2e})")
    return val


def heston_european_cf(model: HestonSpec, strike, maturity, s0=None, v0=None, kind="put") -> float:
    """European price from the single-integral (Lewis) representation.

    ``C = S0 - sqrt(S0 K e^{-rT}) / pi * int_0^inf Re[e^{i u k} phi(u - i/2)] / (u^2 + 1/4) du``
    with ``k = log(S0/K) + rT``; the put follows from parity.
    """
    s0 = model.s0 if s0 is None else s0
    if not (strike > 0 and maturity > 0 and s0 > 0):
        raise ParameterError("strike, maturity and spot must be positive")
    r = model.r
    k = math.log(s0 / strike) + r * maturity

    def integrand(u):
        return (np.exp(1j * u * k) * heston_cf(u - 0.5j, model, maturity, v0)).real / (u * u + 0.25)

    scale = math.sqrt(s0 * strike * math.exp(-r * maturity)) / math.pi
    call = s0 - scale * _quad(integrand, "Lewis integral")
    if kind == "call":
        return call
    return call - s0 + strike * math.exp(-r * maturity)


def heston_call_gil_pelaez(model: HestonSpec, strike, maturity, s0=None, v0=None) -> float:
    """Call price from the two-probability inversion; independent of the
    Lewis route, used to cross-check it."""
    s0 = model.s0 if s0 is None else s0
    r = model.r
    x = math.log(s0 / strike) + r * maturity

    def p2_int(u):
        return (np.exp(1j * u * x) * heston_cf(u, model, maturity, v0) / (1j * u)).real

    def p1_int(u):
        return (np.exp(1j * u * x) * heston_cf(u - 1j, model, maturity, v0) / (1j * u)).real

    p1 = 0.5 + _quad(p1_int, "P1 integral") / math.pi
    p2 = 0.5 + _quad(p2_int, "P2 integral") / math.pi
    return s0 * p1 - strike * math.exp(-r * maturity) * p2


# -- explicit finite differences --------------------------------------------


@dataclass(frozen=True)
class FdConfig:
    """Uniform ``(S, v)`` grid with ``n_s`` and ``n_v`` intervals and ``n_t``
    time steps on ``[0, T]``.

    Boundaries: Dirichlet ``K e^{-r (t_next - t)}`` at ``S = 0``
    (``t_next`` the next exercise date, or ``T`` when early exercise is off),
    ``V_SS = 0`` at ``S_max``, the degenerate PDE with a one-sided ``V_v``
    at ``v = 0`` and ``V_v = 0`` at ``v_max``.
    """

    n_s: int = 512
    n_v: int = 128
    n_t: Optional[int] = None
    s_max: float = 53.0
    v_min: float = 0.0
    v_max: float = 1.0
    boundary: str = "dirichlet-linear-neumann"

    def __post_init__(self):
        if self.n_s < 4 or self.n_v < 4:
            raise ParameterError("need at least 4 intervals per direction")
        if self.n_t is not None and self.n_t < 1:
            raise ParameterError("n_t must be positive")
        if not (self.s_max > 0 and 0 <= self.v_min < self.v_max):
            raise ParameterError("invalid FD domain")
        if self.boundary != "dirichlet-linear-neumann":
            raise ParameterError(f"unknown boundary recipe {self.boundary!r}")


def fd_stable_steps(model: HestonSpec, cfg: FdConfig, maturity: float, multiple: int = 1) -> int:
    """Smallest step count (a multiple of ``multiple``) meeting
    ``dt * max(v S^2/dS^2 + eta^2 v/dv^2 + |rho| eta v S/(dS dv) + r) <= 1``."""
    ds = cfg.s_max / cfg.n_s
    dv = (cfg.v_max - cfg.v_min) / cfg.n_v
    s = cfg.s_max
    v = cfg.v_max
    rate = (
        v * s * s / ds**2
        + model.eta**2 * v / dv**2
        + abs(model.rho) * model.eta * v * s / (ds * dv)
        + model.r
    )
    n = math.ceil(maturity * rate)
    return multiple * math.ceil(n / multiple)


@numba.njit(cache=True)
def _fd_advance(u, n_steps, dt, ds, dv, r, kappa, theta, eta, rho, offset, strike):
    """``n_steps`` explicit steps backwards in time, in place.

    ``offset`` is the time between the start of this stretch and the date at
    which the strike is received when ``S = 0``.
    """
    ns1, nv1 = u.shape
    w = np.empty_like(u)
    for step in range(n_steps):
        for i in range(1, ns1 - 1):
            s = i * ds
            for j in range(1, nv1 - 1):
                v = j * dv
                uss = (u[i + 1, j] - 2.0 * u[i, j] + u[i - 1, j]) / (ds * ds)
                uvv = (u[i, j + 1] - 2.0 * u[i, j] + u[i, j - 1]) / (dv * dv)
                us = (u[i + 1, j] - u[i - 1, j]) / (2.0 * ds)
                uv = (u[i, j + 1] - u[i, j - 1]) / (2.0 * dv)
                usv = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) / (4.0 * ds * dv)
                w[i, j] = u[i, j] + dt * (
                    0.5 * v * s * s * uss
                    + rho * eta * v * s * usv
                    + 0.5 * eta * eta * v * uvv
                    + r * s * us
                    + kappa * (theta - v) * uv
                    - r * u[i, j]
                )
            # v = 0: both diffusions vanish, one-sided difference in v
            us = (u[i + 1, 0] - u[i - 1, 0]) / (2.0 * ds)
            uv = (u[i, 1] - u[i, 0]) / dv
            w[i, 0] = u[i, 0] + dt * (r * s * us + kappa * theta * uv - r * u[i, 0])
        edge = strike * math.exp(-r * (offset + (step + 1) * dt))
        for j in range(nv1):
            w[0, j] = edge
        for i in range(1, ns1 - 1):
            w[i, nv1 - 1] = w[i, nv1 - 2]
        for j in range(nv1):
            w[ns1 - 1, j] = 2.0 * w[ns1 - 2, j] - w[ns1 - 3, j]
        for i in range(ns1):
            for j in range(nv1):
                u[i, j] = w[i, j]
    return u


@dataclass
class FdResult:
    s: np.ndarray
    v: np.ndarray
    values: np.ndarray
    continuation: dict = field(default_factory=dict)
    n_t: int = 0
    dt: float = 0.0

    def value_at(self, s, v) -> float:
        return float(_bilinear(self.s, self.v, self.values, s, v))

    def exercise_indicator(self, date: int, s, v, strike: float) -> np.ndarray:
        """``h > 0 and h >= C`` on the outer product of ``s`` and ``v``."""
        c = _bilinear(self.s, self.v, self.continuation[date], np.asarray(s)[:, None], np.asarray(v)[None, :])
        h = np.maximum(strike - np.asarray(s), 0.0)[:, None]
        return (h > 0) & (h >= c)


def _bilinear(xs, ys, z, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    i = np.clip(((x - xs[0]) / dx).astype(int), 0, len(xs) - 2)
    j = np.clip(((y - ys[0]) / dy).astype(int), 0, len(ys) - 2)
    tx = (x - xs[i]) / dx
    ty = (y - ys[j]) / dy
    return (
        (1 - tx) * (1 - ty) * z[i, j]
        + tx * (1 - ty) * z[i + 1, j]
        + (1 - tx) * ty * z[i, j + 1]
        + tx * ty * z[i + 1, j + 1]
    )


def fd_bermudan_2d(model: HestonSpec, strike: float, maturity: float, n_dates: int, cfg: FdConfig,
                   early_exercise: bool = True) -> FdResult:
    """Explicit scheme for the Heston PDE in ``(S, v)``, stepping back from
    ``T`` and applying ``max(h, .)`` at every exercise date (including ``t_0``).

    The continuation surface just before the max at date ``n`` is kept in
    ``continuation[n]``. Refuses to run when ``n_t`` violates the stability
    bound, reporting the smallest admissible step count.
    """
    if not isinstance(model, HestonSpec):
        raise ConfigurationError("the FD baseline covers the single-asset model")
    need = fd_stable_steps(model, cfg, maturity, n_dates)
    n_t = need if cfg.n_t is None else cfg.n_t
    if n_t < need:
        raise ConfigurationError(
            f"explicit scheme unstable with n_t={n_t}; need n_t >= {need} "
            f"(dt <= {maturity / need:.3e})"
        )
    if n_t % n_dates:
        raise ConfigurationError(f"n_t={n_t} must be a multiple of the {n_dates} exercise intervals")
    s = np.linspace(0.0, cfg.s_max, cfg.n_s + 1)
    v = np.linspace(cfg.v_min, cfg.v_max, cfg.n_v + 1)
    if cfg.v_min != 0.0:
        raise ConfigurationError("the v = 0 boundary recipe needs v_min = 0")
    ds = s[1] - s[0]
    dv = v[1] - v[0]
    dt = maturity / n_t
    per = n_t // n_dates
    h = np.maximum(strike - s, 0.0)[:, None] * np.ones((1, len(v)))
    u = h.copy()
    cont = {}
    for n in range(n_dates - 1, -1, -1):
        offset = 0.0 if early_exercise else (n_dates - 1 - n) * per * dt
        _fd_advance(u, per, dt, ds, dv, model.r, model.kappa, model.theta, model.eta, model.rho,
                    offset, strike)
        if not np.all(np.isfinite(u)):
            raise NumericError(f"FD solution blew up before date {n}")
        if early_exercise:
            cont[n] = u.copy()
            u = np.maximum(u, h)
    return FdResult(s, v, u, cont, n_t, dt)


# -- plain least-squares Monte Carlo ----------------------------------------


def simulate_joint(model, n_paths: int, n_dates: int, maturity: float, n_steps: int, seed: int,
                   stream: int = 0, chunk_size: int = 2048):
    """Joint Euler simulation recorded at the exercise dates.

    Variance by full-truncation Euler, log-asset by log-Euler. Returns
    ``(S, v)`` with shapes ``(N, M+1, dim)``, date 0 included.
    """
    if n_steps % n_dates:
        raise ConfigurationError("n_steps must be a multiple of the number of exercise dates")
    dim = model.dim
    per = n_steps // n_dates
    h = maturity / n_steps
    sqh = math.sqrt(h)
    if dim == 1:
        a = np.array([[math.sqrt(1 - model.rho**2), model.rho], [0.0, 1.0]])
        kappa, theta, eta = (np.array([x]) for x in (model.kappa, model.theta, model.eta))
        v_init, s_init = np.array([model.v0]), np.array([model.s0])
    else:
        a = model.chol
        kappa, theta, eta = (np.array(x) for x in (model.kappa, model.theta, model.eta))
        v_init, s_init = np.array(model.v0), np.array(model.s0)
    n_f = 2 * dim
    s_out = np.empty((n_paths, n_dates + 1, dim))
    v_out = np.empty((n_paths, n_dates + 1, dim))
    for start in range(0, n_paths, chunk_size):
        idx = range(start, min(start + chunk_size, n_paths))
        z = path_normals(seed, stream, idx, n_steps * n_f).reshape(len(idx), n_steps, n_f) * sqh
        x = np.tile(np.log(s_init), (len(idx), 1))
        v = np.tile(v_init, (len(idx), 1)).astype(float)
        s_out[idx.start : idx.stop, 0] = s_init
        v_out[idx.start : idx.stop, 0] = v_init
        for step in range(n_steps):
            dw = z[:, step] @ a.T  # correlated increments (W_S..., W_v...)
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            x = x + (model.r - 0.5 * vp) * h + sv * dw[:, :dim]
            v = v + kappa * (theta - vp) * h + eta * sv * dw[:, dim:]
            if (step + 1) % per == 0:
                d = (step + 1) // per
                s_out[idx.start : idx.stop, d] = np.exp(x)
                v_out[idx.start : idx.stop, d] = np.maximum(v, 0.0)
    return s_out, v_out


def _payoff(s, strike, dim):
    if dim == 1:
        return np.maximum(strike - s[..., 0], 0.0)
    return np.maximum(strike - s.max(axis=-1), 0.0)


def _lsmc_basis(s, v, strike, degree, dim):
    """Tensor monomials ``prod z_k^{e_k}`` in ``z = (S/K, v)`` with every
    exponent ``<= degree``, plus payoff powers ``(h/K)^p``, ``p = 1..degree``."""
    z = np.concatenate([s / strike, v], axis=-1)
    cols = []
    for e in itertools.product(range(degree + 1), repeat=z.shape[-1]):
        col = np.ones(z.shape[0])
        for k, p in enumerate(e):
            if p:
                col = col * z[:, k] ** p
        cols.append(col)
    hk = _payoff(s, strike, dim) / strike
    cols.extend(hk**p for p in range(1, degree + 1))
    return np.column_stack(cols)


def _fit(x, y):
    scale = np.abs(x).max(axis=0)
    scale[scale == 0] = 1.0
    coef, _, rank, _ = np.linalg.lstsq(x / scale, y, rcond=None)
    if rank == 0:
        raise DegenerateDesignError("LSMC design has rank zero")
    return coef / scale


@dataclass
class LsmcResult:
    direct: float
    low: Optional[float]
    coeffs: list
    degree: int
    strike: float

    def exercise_indicator(self, date, s, v, dim=1):
        """Policy ``h > 0 and h >= C`` at date ``date`` for points ``(s, v)``
        of shape ``(n, dim)``."""
        s = np.atleast_2d(s)
        v = np.atleast_2d(v)
        c = _lsmc_basis(s, v, self.strike, self.degree, dim) @ self.coeffs[date]
        h = _payoff(s, self.strike, dim)
        return (h > 0) & (h >= c)


def lsmc_full(model, strike: float, maturity: float, n_dates: int, n_paths: int, degree: int,
              n_steps: int, seed: int, low_paths: Optional[int] = None,
              direct_mode: str = "cashflow") -> LsmcResult:
    """Least-squares Monte Carlo with the regression run on all paths.

    ``direct_mode="cashflow"`` regresses the realised discounted cash flow of
    the policy found so far and reports the in-sample mean of those cash
    flows. ``direct_mode="regressed"`` carries ``V_n = max(h, C_n)`` backwards
    instead, which is biased high. In both cases the direct estimate is
    ``max(h(S0), e^{-r dt} mean V_1)``; the low estimate follows the policy
    on ``low_paths`` fresh paths (stream 1).
    """
    if direct_mode not in ("cashflow", "regressed"):
        raise ParameterError("direct_mode must be 'cashflow' or 'regressed'")
    dim = model.dim
    dt = maturity / n_dates
    disc = math.exp(-model.r * dt)
    s, v = simulate_joint(model, n_paths, n_dates, maturity, n_steps, seed, stream=0)
    value = _payoff(s[:, -1], strike, dim)
    coeffs = [None] * n_dates
    for n in range(n_dates - 1, 0, -1):
        target = disc * value
        h = _payoff(s[:, n], strike, dim)
        x = _lsmc_basis(s[:, n], v[:, n], strike, degree, dim)
        if not np.any(target):
            coeffs[n] = np.zeros(x.shape[1])
        else:
            coeffs[n] = _fit(x, target)
        cont = x @ coeffs[n]
        if direct_mode == "regressed":
            value = np.maximum(h, cont)
        else:
            value = np.where((h > 0) & (h >= cont), h, target)
    s0 = np.atleast_1d(np.asarray(model.s0, float))
    h0 = float(_payoff(s0[None, :], strike, dim)[0])
    direct = max(h0, disc * float(value.mean()))
    result = LsmcResult(direct, None, coeffs, degree, strike)
    if low_paths:
        s2, v2 = simulate_joint(model, low_paths, n_dates, maturity, n_steps, seed, stream=1)
        cash = _payoff(s2[:, -1], strike, dim) * math.exp(-model.r * maturity)
        alive = np.ones(low_paths, dtype=bool)
        payout = np.zeros(low_paths)
        for n in range(1, n_dates):
            ex = alive & result.exercise_indicator(n, s2[:, n], v2[:, n], dim)
            payout[ex] = _payoff(s2[ex, n], strike, dim) * math.exp(-model.r * n * dt)
            alive &= ~ex
        payout[alive] = cash[alive]
        result.low = float(payout.mean())
    return result
