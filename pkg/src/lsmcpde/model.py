"""Heston and two-asset Heston specifications and variance-path simulation.

Only the variance components are simulated. For every exercise interval the
simulation loop accumulates the path statistics that fully determine the
conditional pricing PDE of the log-asset:

1-d layout (``d_theta = 4``)::

    (v_start, int sqrt(v) dW^v, int v dt, v_end)

2-d layout (``d_theta = 9``)::

    (v1_start, v2_start, Z1, Z2, int v1 dt, int v2 dt, int sqrt(v1 v2) dt,
     v1_end, v2_end)

where ``Z_i = int sqrt(v_i) (a_i3 dB3 + a_i4 dB4)`` are the asset shifts carried
by the variance Brownian factors.

Random numbers: every path owns a Philox stream whose key is
``seed * 2**64 + stream * 2**32 + path_index``. A path draws its normals in
step-major order, ``n_factors`` per Euler step, so results do not depend on
how paths are chunked or distributed over workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import ConfigurationError, ParameterError

__all__ = [
    "HestonSpec",
    "MultiHestonSpec",
    "ExerciseSchedule",
    "PathBundle",
    "simulate_paths",
    "theta_of_constant_path",
    "path_normals",
    "upper_cholesky",
    "heston_reference",
    "multi_heston_reference",
]


@dataclass(frozen=True)
class HestonSpec:
    """Single-asset Heston model ``dS = S(r dt + sqrt(v) dW^S)``,
    ``dv = kappa (theta - v) dt + eta sqrt(v) dW^v`` with ``d<W^S, W^v> = rho dt``."""

    r: float
    kappa: float
    theta: float
    eta: float
    rho: float
    v0: float
    s0: float

    dim = 1
    d_theta = 4

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}")
        if not self.theta > 0:
            raise ParameterError(f"theta must be positive, got {self.theta}")
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if not abs(self.rho) <= 1:
            raise ParameterError(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.v0 >= 0:
            raise ParameterError(f"v0 must be nonnegative, got {self.v0}")
        if not self.s0 > 0:
            raise ParameterError(f"s0 must be positive, got {self.s0}")
        if not np.isfinite(self.r):
            raise ParameterError("r must be finite")

    def variance_mean(self, t):
        """CIR mean ``E[v_t]``."""
        return self.theta + (self.v0 - self.theta) * np.exp(-self.kappa * t)

    def integrated_variance_mean(self, t):
        """``E[int_0^t v ds]``."""
        k = self.kappa
        return self.theta * t + (self.v0 - self.theta) * (1 - np.exp(-k * t)) / k


def upper_cholesky(rho: np.ndarray) -> np.ndarray:
    """Upper-triangular ``a`` with ``rho = a @ a.T``.

    Obtained by reversing the variable order, taking the ordinary (lower)
    Cholesky factor and reversing back, so the last variable loads only on
    the last independent factor (``a[-1, -1] == 1`` for a correlation matrix).
    """
    p = np.eye(len(rho))[::-1]
    lower = np.linalg.cholesky(p @ rho @ p)
    return p @ lower @ p


@dataclass(frozen=True, eq=False)
class MultiHestonSpec:
    """Two assets, each with its own CIR variance; the four Brownian motions
    ``(W1, W2, W3, W4)`` driving ``(S1, S2, v1, v2)`` have correlation ``rho``."""

    r: float
    kappa: tuple
    theta: tuple
    eta: tuple
    v0: tuple
    s0: tuple
    rho: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    dim = 2
    d_theta = 9

    def __post_init__(self):
        for name in ("kappa", "theta", "eta", "v0", "s0"):
            vals = tuple(float(x) for x in getattr(self, name))
            if len(vals) != 2:
                raise ParameterError(f"{name} needs one value per asset")
            object.__setattr__(self, name, vals)
        if min(self.kappa) <= 0 or min(self.theta) <= 0 or min(self.eta) <= 0:
            raise ParameterError("kappa, theta and eta must be positive")
        if min(self.v0) < 0:
            raise ParameterError("v0 must be nonnegative")
        if min(self.s0) <= 0:
            raise ParameterError("s0 must be positive")
        rho = np.array(self.rho, dtype=float)
        if rho.shape != (4, 4):
            raise ParameterError("rho must be a 4x4 correlation matrix")
        if not np.allclose(rho, rho.T, atol=0, rtol=0):
            raise ParameterError("rho must be symmetric")
        if not np.array_equal(np.diag(rho), np.ones(4)):
            raise ParameterError("rho must have a unit diagonal")
        try:
            chol = upper_cholesky(rho)
        except np.linalg.LinAlgError as exc:
            raise ParameterError("rho must be positive definite") from exc
        rho.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "chol", chol)


ModelSpec = Union[HestonSpec, MultiHestonSpec]


@dataclass(frozen=True)
class ExerciseSchedule:
    """Equally spaced exercise dates ``t_1 < ... < t_M = T``."""

    maturity: float
    n_dates: int

    def __post_init__(self):
        if not self.maturity > 0:
            raise ParameterError("maturity must be positive")
        if int(self.n_dates) != self.n_dates or self.n_dates < 1:
            raise ParameterError("n_dates must be a positive integer")

    @property
    def dt(self) -> float:
        return self.maturity / self.n_dates

    @property
    def dates(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_dates + 1)


@dataclass
class PathBundle:
    """Per-interval path statistics, ``theta[j, n]`` for path ``j`` over
    ``[t_n, t_{n+1}]``."""

    theta: np.ndarray
    dim: int
    seed: int
    maturity: float
    n_steps: int
    stream: int = 0

    @property
    def n_paths(self) -> int:
        return self.theta.shape[0]

    @property
    def intervals(self) -> int:
        return self.theta.shape[1]

    @property
    def dt(self) -> float:
        return self.maturity / self.intervals

    def v_start(self, n: int) -> np.ndarray:
        """Variance at ``t_n``, shape ``(N, dim)``."""
        return self.theta[:, n, : self.dim]

    def v_end(self, n: int) -> np.ndarray:
        return self.theta[:, n, -self.dim :]

    def variance_at_dates(self) -> np.ndarray:
        """Variance at ``t_0 .. t_M``, shape ``(N, M + 1, dim)``."""
        starts = self.theta[:, :, : self.dim]
        last = self.theta[:, -1:, -self.dim :]
        return np.concatenate([starts, last], axis=1)

    # binary layout: little-endian header followed by theta as float64 in C order
    _HEADER = struct.Struct("<4sIIQQQqqdQ")
    _MAGIC = b"LPB1"

    def save(self, path) -> None:
        header = self._HEADER.pack(
            self._MAGIC,
            1,
            self.dim,
            self.n_paths,
            self.intervals,
            self.theta.shape[2],
            self.seed,
            self.stream,
            self.maturity,
            self.n_steps,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.theta, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PathBundle":
        raw = Path(path).read_bytes()
        size = cls._HEADER.size
        if len(raw) < size:
            raise ConfigurationError(f"{path}: truncated path file")
        magic, version, dim, n, m, d, seed, stream, maturity, n_steps = cls._HEADER.unpack(
            raw[:size]
        )
        if magic != cls._MAGIC or version != 1:
            raise ConfigurationError(f"{path}: not a path bundle file")
        body = np.frombuffer(raw[size:], dtype="<f8")
        if body.size != n * m * d:
            raise ConfigurationError(f"{path}: expected {n * m * d} values, found {body.size}")
        theta = body.reshape(n, m, d).astype(np.float64)
        return cls(theta, dim, seed, maturity, n_steps, stream)


def path_normals(seed: int, stream: int, indices, size: int) -> np.ndarray:
    """Standard normals, one independent Philox stream per path index."""
    if seed < 0 or not 0 <= stream < 2**32:
        raise ParameterError("seed must be nonnegative and stream < 2**32")
    out = np.empty((len(indices), size))
    base = (int(seed) << 64) | (int(stream) << 32)
    for row, j in enumerate(indices):
        gen = np.random.Generator(np.random.Philox(key=base | int(j)))
        out[row] = gen.standard_normal(size)
    return out


def simulate_paths(
    spec: ModelSpec,
    schedule: ExerciseSchedule,
    n_paths: int,
    n_steps: int,
    seed: int,
    stream: int = 0,
    chunk_size: int = 2048,
) -> PathBundle:
    """Full-truncation Euler simulation of the variance components.

    ``n_steps`` is the total number of Euler steps on ``[0, T]`` and must be
    a multiple of the number of exercise intervals.
    """
    m = schedule.n_dates
    if n_paths < 1:
        raise ParameterError("n_paths must be positive")
    if n_steps < m or n_steps % m:
        raise ConfigurationError(
            f"n_steps={n_steps} must be a positive multiple of the {m} exercise intervals"
        )
    per = n_steps // m
    h = schedule.maturity / n_steps
    sqh = np.sqrt(h)
    theta = np.empty((n_paths, m, spec.d_theta))
    sim = _simulate_1d if spec.dim == 1 else _simulate_2d
    for start in range(0, n_paths, chunk_size):
        idx = range(start, min(start + chunk_size, n_paths))
        dw = path_normals(seed, stream, idx, n_steps * spec.dim)
        dw = dw.reshape(len(idx), n_steps, spec.dim) * sqh
        theta[idx.start : idx.stop] = sim(spec, dw, m, per, h)
    return PathBundle(theta, spec.dim, seed, schedule.maturity, n_steps, stream)


def _simulate_1d(spec: HestonSpec, dw, m, per, h):
    n = dw.shape[0]
    out = np.empty((n, m, 4))
    v = np.full(n, float(spec.v0))
    k, th, eta = spec.kappa, spec.theta, spec.eta
    for interval in range(m):
        vp = np.maximum(v, 0.0)
        out[:, interval, 0] = vp
        stoch = np.zeros(n)
        integ = np.zeros(n)
        for step in range(interval * per, (interval + 1) * per):
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            inc = dw[:, step, 0]
            stoch += sv * inc
            integ += vp * h
            v = v + k * (th - vp) * h + eta * sv * inc
        out[:, interval, 1] = stoch
        out[:, interval, 2] = integ
        out[:, interval, 3] = np.maximum(v, 0.0)
    return out


def _simulate_2d(spec: MultiHestonSpec, dw, m, per, h):
    n = dw.shape[0]
    a = spec.chol
    out = np.empty((n, m, 9))
    v1 = np.full(n, spec.v0[0])
    v2 = np.full(n, spec.v0[1])
    k1, k2 = spec.kappa
    th1, th2 = spec.theta
    e1, e2 = spec.eta
    for interval in range(m):
        out[:, interval, 0] = np.maximum(v1, 0.0)
        out[:, interval, 1] = np.maximum(v2, 0.0)
        acc = np.zeros((5, n))
        for step in range(interval * per, (interval + 1) * per):
            p1 = np.maximum(v1, 0.0)
            p2 = np.maximum(v2, 0.0)
            s1 = np.sqrt(p1)
            s2 = np.sqrt(p2)
            b3 = dw[:, step, 0]
            b4 = dw[:, step, 1]
            acc[0] += s1 * (a[0, 2] * b3 + a[0, 3] * b4)
            acc[1] += s2 * (a[1, 2] * b3 + a[1, 3] * b4)
            acc[2] += p1 * h
            acc[3] += p2 * h
            acc[4] += s1 * s2 * h
            v1 = v1 + k1 * (th1 - p1) * h + e1 * s1 * (a[2, 2] * b3 + a[2, 3] * b4)
            v2 = v2 + k2 * (th2 - p2) * h + e2 * s2 * a[3, 3] * b4
        out[:, interval, 2:7] = acc.T
        out[:, interval, 7] = np.maximum(v1, 0.0)
        out[:, interval, 8] = np.maximum(v2, 0.0)
    return out


def theta_of_constant_path(v_const, dt: float, dim: int = 1) -> np.ndarray:
    """Path statistics of a variance path frozen at ``v_const`` with zero
    Brownian increments.

    For ``dim == 2`` pass ``v_const`` as a pair ``(v1, v2)``.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if dim == 1:
        v = float(v_const)
        if v < 0:
            raise ParameterError("variance must be nonnegative")
        return np.array([v, 0.0, v * dt, v])
    v1, v2 = (float(x) for x in v_const)
    if v1 < 0 or v2 < 0:
        raise ParameterError("variance must be nonnegative")
    return np.array([v1, v2, 0.0, 0.0, v1 * dt, v2 * dt, np.sqrt(v1 * v2) * dt, v1, v2])


def heston_reference() -> HestonSpec:
    """Single-asset parameter set used throughout the tests and bundled configs."""
    return HestonSpec(r=0.02, kappa=5.0, theta=0.16, eta=0.9, rho=0.1, v0=0.15, s0=10.0)


def multi_heston_reference() -> MultiHestonSpec:
    rho = np.array(
        [
            [1.0, 0.2, -0.3, -0.15],
            [0.2, 1.0, -0.11, -0.35],
            [-0.3, -0.11, 1.0, 0.2],
            [-0.15, -0.35, 0.2, 1.0],
        ]
    )
    return MultiHestonSpec(
        r=0.025,
        kappa=(1.52, 1.3),
        theta=(0.45, 0.30),
        eta=(0.4, 0.43),
        v0=(0.45, 0.3),
        s0=(10.0, 10.0),
        rho=rho,
    )
