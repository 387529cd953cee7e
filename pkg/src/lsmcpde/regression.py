"""Cross-sectional regression of conditional expectations on a variance basis.

For every asset grid point ``s_i`` the continuation value is approximated as
``C(s_i, v) = a(s_i) . phi(v)``. All grid points share the same design, so a
single Gram matrix is factorised per exercise date and applied to every grid
point at once:

    a(s_i) = A^{-1} (1/N) sum_j w_j phi(v_j) C_j(s_i),   A = (1/N) sum_j phi(v_j) phi(v_j)^T

The basis is made of monomials in an affinely rescaled variable
``z = (v - center) / scale``. Rescaling leaves the span untouched but keeps
the Gram matrix well conditioned for degree 5 polynomials in a variance that
lives around 0.1. Every basis function vanishes outside its support box.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DegenerateDesignError, ParameterError
from .fst import GridSpec

__all__ = [
    "MonomialBasis",
    "TruncationConfig",
    "GramMatrix",
    "CoeffSurface",
    "RegressionAccumulator",
    "gram_matrix",
    "regress_surface",
    "evaluate_continuation",
    "VolatilityRegressor",
]


def _as_points(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if dim == 1 and (v.ndim == 0 or v.ndim == 1):
        return v.reshape(-1, 1)
    v = np.atleast_2d(v)
    if v.shape[-1] != dim:
        raise ConfigurationError(f"expected variance points with {dim} components")
    return v.reshape(-1, dim)


@dataclass(frozen=True)
class MonomialBasis:
    """Monomials of total degree ``<= degree`` in ``z = (v - center) / scale``.

    ``lo`` and ``hi`` bound the support box; ``None`` leaves that side open.
    With the default ``center=0, scale=1`` the functions are plain monomials
    ``v^k`` (tensor monomials ``v1^k v2^l`` in 2-d).
    """

    degree: int
    dim: int = 1
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None
    center: tuple = (0.0,)
    scale: tuple = (1.0,)
    exponents: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ParameterError("basis degree must be a nonnegative integer")
        if self.dim not in (1, 2):
            raise ParameterError("basis dim must be 1 or 2")
        for name in ("lo", "hi", "center", "scale"):
            val = getattr(self, name)
            if val is None:
                continue
            val = tuple(float(x) for x in np.broadcast_to(np.asarray(val, float), (self.dim,)))
            object.__setattr__(self, name, val)
        if min(self.scale) <= 0:
            raise ParameterError("basis scale must be positive")
        if self.lo is not None and self.hi is not None:
            if not all(a < b for a, b in zip(self.lo, self.hi)):
                raise ParameterError("support box needs lo < hi componentwise")
        exps = [
            e
            for total in range(self.degree + 1)
            for e in itertools.product(range(total + 1), repeat=self.dim)
            if sum(e) == total
        ]
        # graded order, higher powers of the first variable first within a degree
        exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
        object.__setattr__(self, "exponents", np.array(exps, dtype=int))

    @property
    def n_functions(self) -> int:
        return len(self.exponents)

    @classmethod
    def from_samples(cls, v, degree: int, dim: int = 1, quantile: float = 0.001, enlarge: float = 0.5):
        """Support box from sample quantiles, widened by ``enlarge`` times its
        width (split evenly between both sides); rescaled to ``[-1, 1]``
        over the unenlarged quantile range."""
        pts = _as_points(v, dim)
        if not 0 <= quantile < 0.5 or enlarge < 0:
            raise ParameterError("need 0 <= quantile < 0.5 and enlarge >= 0")
        q_lo = np.quantile(pts, quantile, axis=0)
        q_hi = np.quantile(pts, 1 - quantile, axis=0)
        width = q_hi - q_lo
        # a degenerate sample (all paths equal) still gets a usable box
        width = np.where(width > 0, width, np.maximum(np.abs(q_hi), 1.0) * 1e-6)
        lo = q_lo - 0.5 * enlarge * width
        hi = q_hi + 0.5 * enlarge * width
        return cls(degree, dim, tuple(lo), tuple(hi), tuple(0.5 * (q_lo + q_hi)), tuple(0.5 * width))

    def inside(self, v) -> np.ndarray:
        pts = _as_points(v, self.dim)
        mask = np.all(np.isfinite(pts), axis=1)
        if self.lo is not None:
            mask &= np.all(pts >= np.array(self.lo), axis=1)
        if self.hi is not None:
            mask &= np.all(pts <= np.array(self.hi), axis=1)
        return mask

    def evaluate(self, v) -> np.ndarray:
        """Basis matrix of shape ``(n, d_B)``; rows outside the box are zero."""
        pts = _as_points(v, self.dim)
        mask = self.inside(pts)
        z = (np.where(mask[:, None], pts, 0.0) - np.array(self.center)) / np.array(self.scale)
        out = np.ones((len(pts), self.n_functions))
        for k in range(self.dim):
            powers = z[:, k : k + 1] ** np.arange(self.degree + 1)
            out *= powers[:, self.exponents[:, k]]
        out[~mask] = 0.0
        return out


@dataclass(frozen=True)
class TruncationConfig:
    """Safeguards on the regression design.

    ``R`` bounds the spectral norm of the inverse Gram matrix. When ``v_lo``
    and ``v_hi`` are given they fix the support box; otherwise it is taken
    from the sample quantiles at every date.
    """

    R: float = 1e8
    v_lo: Optional[tuple] = None
    v_hi: Optional[tuple] = None
    quantile: float = 0.001
    enlarge: float = 0.5

    def __post_init__(self):
        if not self.R > 0:
            raise ParameterError("R must be positive")
        if (self.v_lo is None) != (self.v_hi is None):
            raise ParameterError("give both v_lo and v_hi or neither")
        if self.v_lo is not None:
            lo = np.atleast_1d(self.v_lo)
            hi = np.atleast_1d(self.v_hi)
            if lo.shape != hi.shape or not np.all(lo < hi):
                raise ParameterError("v_lo < v_hi must hold componentwise")

    def basis_for(self, v, degree: int, dim: int = 1) -> MonomialBasis:
        if self.v_lo is None:
            return MonomialBasis.from_samples(v, degree, dim, self.quantile, self.enlarge)
        lo = np.broadcast_to(np.asarray(self.v_lo, float), (dim,))
        hi = np.broadcast_to(np.asarray(self.v_hi, float), (dim,))
        return MonomialBasis(degree, dim, tuple(lo), tuple(hi), tuple(0.5 * (lo + hi)), tuple(0.5 * (hi - lo)))


@dataclass(frozen=True)
class GramMatrix:
    matrix: np.ndarray
    inverse: np.ndarray
    inv_norm: float
    within_bound: bool
    n_samples: int

    def check(self):
        if not self.within_bound:
            raise DegenerateDesignError(
                f"inverse Gram norm {self.inv_norm:.3e} exceeds the truncation bound"
            )
        return self


def _invert_spd(a: np.ndarray) -> np.ndarray:
    eye = np.eye(len(a))
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(a, lower=True), eye)
    except np.linalg.LinAlgError:
        return scipy.linalg.solve(a, eye, assume_a="sym")


def gram_matrix(v_samples, basis: MonomialBasis, trunc: Optional[TruncationConfig] = None) -> GramMatrix:
    """``A = (1/N) sum phi(v_j) phi(v_j)^T`` and its inverse over all samples."""
    trunc = trunc or TruncationConfig()
    phi = basis.evaluate(v_samples)
    n = len(phi)
    n_in = int(np.count_nonzero(np.any(phi != 0, axis=1)))
    if n_in < basis.n_functions:
        raise DegenerateDesignError(
            f"{n_in} samples inside the support box, need at least {basis.n_functions}"
        )
    a = phi.T @ phi / n
    a = 0.5 * (a + a.T)
    if np.linalg.matrix_rank(a, tol=1e-13 * max(np.abs(a).max(), 1e-300)) < len(a):
        raise DegenerateDesignError("Gram matrix is rank deficient")
    try:
        inv = _invert_spd(a)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise DegenerateDesignError("Gram matrix is singular") from exc
    inv = 0.5 * (inv + inv.T)
    norm = float(np.linalg.norm(inv, 2))
    if not np.isfinite(norm):
        raise DegenerateDesignError("Gram inverse is not finite")
    return GramMatrix(a, inv, norm, norm <= trunc.R, n)


@dataclass
class CoeffSurface:
    """Regression coefficients, one row of length ``d_B`` per grid point."""

    grid: GridSpec
    coeffs: np.ndarray
    basis: MonomialBasis
    date: int = -1

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.grid.size, self.basis.n_functions):
            raise ConfigurationError(
                f"coefficient matrix {self.coeffs.shape} does not match "
                f"{self.grid.size} grid points x {self.basis.n_functions} functions"
            )

    def evaluate(self, v) -> np.ndarray:
        """Continuation values ``C(s_i, v_j)``, shape ``(n_points_v, *grid.shape)``."""
        phi = self.basis.evaluate(v)
        return (phi @ self.coeffs.T).reshape(len(phi), *self.grid.shape)

    def to_csv(self, path) -> None:
        header = ",".join(["grid_index"] + [f"a{k}" for k in range(self.basis.n_functions)])
        rows = np.column_stack([np.arange(self.grid.size), self.coeffs])
        fmt = ["%d"] + ["%.17g"] * self.basis.n_functions
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt=fmt)


def evaluate_continuation(coeffs: CoeffSurface, grid_index, v) -> float:
    """``a(s_i) . phi(v)`` at a single flat grid index; zero outside the box."""
    phi = coeffs.basis.evaluate(v)[0]
    return float(coeffs.coeffs[grid_index] @ phi)


class RegressionAccumulator:
    """Streams pre-surface rows into ``sum_j w_j phi(v_j) C_j``.

    Rows are added in the order given, so two runs that feed identical chunks
    produce identical sums.
    """

    def __init__(self, basis: MonomialBasis, n_grid: int):
        self.basis = basis
        self.total = np.zeros((basis.n_functions, n_grid))

    def add(self, pre_rows, v_rows, weights=None):
        pre_rows = np.asarray(pre_rows, dtype=float).reshape(len(pre_rows), -1)
        phi = self.basis.evaluate(v_rows)
        if len(phi) != len(pre_rows):
            raise ConfigurationError("pre-surface rows and variance samples differ in count")
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (len(phi),):
                raise ConfigurationError("one weight per pre-surface row is required")
            phi = phi * weights[:, None]
        self.total += phi.T @ pre_rows
        return self

    def solve(self, gram: GramMatrix) -> np.ndarray:
        """Coefficient matrix of shape ``(n_grid, d_B)``."""
        return (gram.inverse @ (self.total / gram.n_samples)).T


def regress_surface(
    pre_surface,
    v_samples,
    weights,
    basis: MonomialBasis,
    trunc: Optional[TruncationConfig] = None,
    grid: Optional[GridSpec] = None,
    gram: Optional[GramMatrix] = None,
    date: int = -1,
) -> CoeffSurface:
    """Coefficients from per-path (or per-representative) pre-surfaces.

    ``gram`` defaults to the Gram matrix of ``v_samples``. When the rows are
    cluster representatives pass the Gram matrix of all paths instead.
    """
    pre = np.asarray(pre_surface, dtype=float)
    n_rows = pre.shape[0]
    if grid is None:
        grid = GridSpec(pre.shape[-1]) if pre.ndim == 2 else GridSpec(pre.shape[-1], dim=2)
    flat = pre.reshape(n_rows, -1)
    if flat.shape[1] != grid.size:
        raise ConfigurationError("pre-surface does not match the grid")
    if weights is not None and len(weights) != n_rows:
        raise ConfigurationError("one weight per pre-surface row is required")
    if not np.all(np.isfinite(flat)):
        raise DegenerateDesignError("non-finite pre-surface values")
    if gram is None:
        gram = gram_matrix(v_samples, basis, trunc)
    gram.check()
    acc = RegressionAccumulator(basis, grid.size).add(flat, v_samples, weights)
    return CoeffSurface(grid, acc.solve(gram), basis, date)


class VolatilityRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: regress multi-output targets on a variance basis.

    ``X`` holds variance samples of shape ``(n, dim)`` and ``y`` the matching
    pre-surface values ``(n, n_grid)`` or ``(n,)``.
    """

    def __init__(self, degree=5, quantile=0.001, enlarge=0.5, R=1e8, rescale=True):
        self.degree = degree
        self.quantile = quantile
        self.enlarge = enlarge
        self.R = R
        self.rescale = rescale

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float)
        if len(X) != len(y):
            raise ConfigurationError("X and y differ in sample count")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError("X and y must be finite")
        dim = X.shape[1]
        trunc = TruncationConfig(self.R, quantile=self.quantile, enlarge=self.enlarge)
        basis = trunc.basis_for(X, self.degree, dim)
        if not self.rescale:
            basis = MonomialBasis(self.degree, dim, basis.lo, basis.hi)
        targets = y.reshape(len(y), -1)
        gram = gram_matrix(X, basis, trunc).check()
        acc = RegressionAccumulator(basis, targets.shape[1]).add(targets, X, sample_weight)
        self.basis_ = basis
        self.gram_ = gram
        self.coef_ = acc.solve(gram)
        self.n_features_in_ = dim
        self._single_output = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.n_features_in_:
            raise ConfigurationError(f"expected {self.n_features_in_} features")
        out = self.basis_.evaluate(X) @ self.coef_.T
        return out[:, 0] if self._single_output else out
