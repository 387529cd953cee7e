"""Fourier space time-stepping for the path-conditional log-asset PDE.

Given the variance path statistics of one interval, the conditional PDE in
``y = log(S/S0)`` has deterministic coefficients, so its solution over the
whole interval is a single multiplication of the transformed terminal
condition by ``exp(Psi)``.

Conventions
-----------
Grid nodes ``x_k = x_min + k dx`` for ``k = 0 .. N-1`` with
``dx = (x_max - x_min) / N`` (periodic). Frequencies follow numpy's FFT
ordering, ``omega_k = 2 pi k / (x_max - x_min)``. With ``numpy.fft`` a shift
``g(x + c)`` multiplies the spectrum by ``exp(i omega c)``, which is how the
asset shift ``Z`` enters ``Psi``.

At the Nyquist bin the multiplier is replaced by its Hermitian part so the
inverse transform of a real terminal condition is real (in 1-d this is the
real part of ``exp(Psi)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, NumericError, ParameterError
from .model import HestonSpec, MultiHestonSpec

__all__ = [
    "GridSpec",
    "ValueSurface",
    "build_psi",
    "fst_step",
    "conditional_expectation_over_interval",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic log-moneyness grid, identical in every dimension."""

    n_points: int
    x_min: float = -3.0
    x_max: float = 3.0
    dim: int = 1

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ParameterError(f"n_points must be a power of two, got {n}")
        if self.dim not in (1, 2):
            raise ParameterError("dim must be 1 or 2")
        if not self.x_min < 0 < self.x_max:
            raise ParameterError("the grid must straddle log-moneyness 0")
        pos = -self.x_min / self.dx
        if abs(pos - round(pos)) > 1e-9:
            raise ParameterError("log-moneyness 0 must be a grid node")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @cached_property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    @property
    def origin(self) -> int:
        """Index of the node ``x = 0``."""
        return int(round(-self.x_min / self.dx))

    @property
    def shape(self) -> tuple:
        return (self.n_points,) * self.dim

    @property
    def size(self) -> int:
        return self.n_points**self.dim

    def with_points(self, n_points: int) -> "GridSpec":
        return GridSpec(n_points, self.x_min, self.x_max, self.dim)

    def spots(self, s0) -> list:
        """Asset levels at the nodes, one array per dimension."""
        s0 = np.atleast_1d(s0)
        return [s0[i] * np.exp(self.x) for i in range(self.dim)]


@dataclass
class ValueSurface:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-self.grid.dim :] != self.grid.shape:
            raise ConfigurationError("values do not match the grid shape")

    def at_origin(self):
        """Value at ``S = S0`` (exact node, no interpolation)."""
        o = self.grid.origin
        return self.values[(..., *([o] * self.grid.dim))]


def build_psi(theta, model, grid: GridSpec, dt: float) -> np.ndarray:
    """Integrated characteristic exponent on the grid frequencies.

    ``theta`` has shape ``(..., d_theta)``; the result has shape
    ``(..., N)`` in 1-d and ``(..., N, N)`` in 2-d.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != model.d_theta or grid.dim != model.dim:
        raise ConfigurationError(
            f"path statistics of width {theta.shape[-1]} do not match a "
            f"{grid.dim}-d grid for a {model.dim}-d model"
        )
    w = grid.omega
    if isinstance(model, HestonSpec):
        rho = model.rho
        shift = rho * theta[..., 1] + model.r * dt - 0.5 * theta[..., 2]
        diff = (1 - rho * rho) * theta[..., 2]
        return 1j * w * shift[..., None] - 0.5 * w * w * diff[..., None]
    if isinstance(model, MultiHestonSpec):
        a = model.chol
        t = theta[..., None, None, :]
        w1 = w[:, None]
        w2 = w[None, :]
        shift1 = t[..., 2] + model.r * dt - 0.5 * t[..., 4]
        shift2 = t[..., 3] + model.r * dt - 0.5 * t[..., 5]
        return (
            1j * (w1 * shift1 + w2 * shift2)
            - 0.5 * (a[0, 0] ** 2 + a[0, 1] ** 2) * w1 * w1 * t[..., 4]
            - 0.5 * a[1, 1] ** 2 * w2 * w2 * t[..., 5]
            - a[0, 1] * a[1, 1] * w1 * w2 * t[..., 6]
        )
    raise ConfigurationError(f"unsupported model {type(model).__name__}")


def _multiplier(psi: np.ndarray, dim: int) -> np.ndarray:
    mult = np.exp(psi)
    n = psi.shape[-1]
    ny = n // 2
    if dim == 1:
        mult[..., ny] = mult[..., ny].real
        return mult
    rev = (-np.arange(n)) % n
    row = mult[..., ny, :]
    col = mult[..., :, ny]
    new_row = 0.5 * (row + np.conj(row[..., rev]))
    new_col = 0.5 * (col + np.conj(col[..., rev]))
    mult[..., ny, :] = new_row
    mult[..., :, ny] = new_col
    return mult


def fst_step(terminal, psi: np.ndarray, dim: int = 1) -> np.ndarray:
    """``FFT^-1[ FFT[terminal] * exp(psi) ]`` over the trailing ``dim`` axes.

    ``terminal`` broadcasts against ``psi``; a single shared terminal
    condition is transformed once. Returns the (undiscounted) conditional
    expectation on the grid.
    """
    if isinstance(terminal, ValueSurface):
        g = terminal.grid
        return ValueSurface(g, fst_step(terminal.values, psi, g.dim))
    terminal = np.asarray(terminal, dtype=float)
    psi = np.asarray(psi)
    axes = tuple(range(-dim, 0))
    if terminal.shape[-dim:] != psi.shape[-dim:]:
        raise ConfigurationError("terminal condition and exponent live on different grids")
    if not (np.all(np.isfinite(terminal)) and np.all(np.isfinite(psi))):
        raise NumericError("non-finite input to the Fourier step")
    spec = np.fft.fftn(terminal, axes=axes)
    out = np.fft.ifftn(spec * _multiplier(psi, dim), axes=axes)
    values = out.real
    scale = np.max(np.abs(values), initial=0.0)
    resid = np.max(np.abs(out.imag), initial=0.0)
    if resid > 1e-8 * scale + 1e-300:
        raise NumericError(f"inverse transform left imaginary residue {resid:.3e}")
    return values


def conditional_expectation_over_interval(payoff_surface, theta, model, grid: GridSpec, dt, r=None):
    """Discounted one-interval conditional expectation ``e^{-r dt} E[g | theta]``."""
    r = model.r if r is None else r
    values = payoff_surface.values if isinstance(payoff_surface, ValueSurface) else payoff_surface
    out = np.exp(-r * dt) * fst_step(values, build_psi(theta, model, grid, dt), grid.dim)
    return ValueSurface(grid, out)
