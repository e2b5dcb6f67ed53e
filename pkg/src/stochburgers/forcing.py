"""Brownian forcing paths shared by every solver.

A :class:`ForcingPath` stores the increments ``d1[n, k]`` and ``d2[n, k]`` of the
independent Wiener processes ``beta1_n`` and ``beta2_n`` on a uniform time grid.
Each stream ``(j, n)`` draws from its own counter-based Philox generator keyed by
``(seed, j, n)``, so a path is a pure function of ``(seed, grid, N)`` no matter in
which order or on which worker it is generated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectrum import Spectrum

__all__ = [
    "TimeGrid",
    "ForcingPath",
    "ForcingBatch",
    "sample_forcing",
    "sample_batch",
    "stream_generator",
    "zeta",
    "zeta_x",
    "brownian_sup",
    "increment_range",
    "mode_basis",
    "dump_forcing",
    "load_forcing",
]

_HEADER = struct.Struct("<qdqq")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * T / K`` on ``[0, T]``."""

    T: float
    K: int

    def __post_init__(self) -> None:
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"number of steps K must be a positive integer, got {self.K}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.K

    def time(self, k: int) -> float:
        # exact at the right end
        return self.T if k == self.K else k * self.dt

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.K + 1) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises if ``t`` is not on the grid."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.K or abs(k * self.dt - t) > tol * max(1.0, self.T):
            raise ValueError(f"time {t} is not a point of the grid (T={self.T}, K={self.K})")
        return k


def stream_generator(seed: int, j: int, n: int) -> np.random.Generator:
    """Philox generator for stream ``(j, n)`` of master ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence([int(seed), int(j), int(n)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True, eq=False)
class ForcingPath:
    """One realization of all driving increments.

    ``d1`` and ``d2`` have shape ``(N, K)``; row ``n - 1`` belongs to mode ``n``.
    """

    grid: TimeGrid
    d1: np.ndarray
    d2: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        d1 = np.ascontiguousarray(self.d1, dtype=np.float64)
        d2 = np.ascontiguousarray(self.d2, dtype=np.float64)
        if d1.ndim != 2 or d1.shape != d2.shape or d1.shape[1] != self.grid.K:
            raise ValueError(
                f"increment arrays must both have shape (N, K={self.grid.K}), "
                f"got {d1.shape} and {d2.shape}"
            )
        d1.setflags(write=False)
        d2.setflags(write=False)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)

    @property
    def n_modes(self) -> int:
        return self.d1.shape[0]

    def increments(self, j: int) -> np.ndarray:
        if j == 1:
            return self.d1
        if j == 2:
            return self.d2
        raise ValueError(f"component j must be 1 or 2, got {j}")

    def beta(self, j: int) -> np.ndarray:
        """Brownian values ``beta^{jn}(t_k)``, shape ``(N, K + 1)`` with a zero first column."""
        d = self.increments(j)
        out = np.zeros((d.shape[0], d.shape[1] + 1))
        np.cumsum(d, axis=1, out=out[:, 1:])
        return out

    def coarsen(self, factor: int) -> "ForcingPath":
        """Same Brownian path on a grid ``factor`` times coarser (increments summed)."""
        if factor < 1 or self.grid.K % factor:
            raise ValueError(f"cannot coarsen K={self.grid.K} by {factor}")
        K = self.grid.K // factor
        n = self.n_modes
        return ForcingPath(
            TimeGrid(self.grid.T, K),
            self.d1.reshape(n, K, factor).sum(axis=2),
            self.d2.reshape(n, K, factor).sum(axis=2),
            self.seed,
        )

    def truncate(self, n_modes: int) -> "ForcingPath":
        return ForcingPath(self.grid, self.d1[:n_modes], self.d2[:n_modes], self.seed)

    def as_batch(self) -> "ForcingBatch":
        return ForcingBatch(self.grid, self.d1[None], self.d2[None], (self.seed,))

    def zeroed(self) -> "ForcingPath":
        return ForcingPath(self.grid, np.zeros_like(self.d1), np.zeros_like(self.d2), self.seed)


@dataclass(frozen=True, eq=False)
class ForcingBatch:
    """Several independent paths on one grid; arrays of shape ``(B, N, K)``."""

    grid: TimeGrid
    d1: np.ndarray
    d2: np.ndarray
    seeds: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.d1.ndim != 3 or self.d1.shape != self.d2.shape or self.d1.shape[2] != self.grid.K:
            raise ValueError(f"batch increments must have shape (B, N, K), got {self.d1.shape}")

    @classmethod
    def stack(cls, paths: Sequence[ForcingPath]) -> "ForcingBatch":
        if not paths:
            raise ValueError("cannot stack an empty list of paths")
        grid = paths[0].grid
        if any(p.grid != grid for p in paths):
            raise ValueError("all paths in a batch must share one time grid")
        return cls(
            grid,
            np.stack([p.d1 for p in paths]),
            np.stack([p.d2 for p in paths]),
            tuple(p.seed for p in paths),
        )

    @property
    def size(self) -> int:
        return self.d1.shape[0]

    @property
    def n_modes(self) -> int:
        return self.d1.shape[1]

    def path(self, b: int) -> ForcingPath:
        seed = self.seeds[b] if self.seeds else 0
        return ForcingPath(self.grid, self.d1[b], self.d2[b], seed)


def _as_batch(path) -> ForcingBatch:
    return path.as_batch() if isinstance(path, ForcingPath) else path


def sample_forcing(spec: Spectrum | int, grid: TimeGrid, seed: int) -> ForcingPath:
    """Draw all ``2N`` increment streams of one realization.

    ``spec`` may be a :class:`Spectrum` or the mode count ``N`` directly.
    """
    n_modes = spec if isinstance(spec, int) else spec.n_max
    sd = np.sqrt(grid.dt)
    d1 = np.empty((n_modes, grid.K))
    d2 = np.empty((n_modes, grid.K))
    for n in range(1, n_modes + 1):
        d1[n - 1] = stream_generator(seed, 1, n).standard_normal(grid.K) * sd
        d2[n - 1] = stream_generator(seed, 2, n).standard_normal(grid.K) * sd
    return ForcingPath(grid, d1, d2, int(seed))


def sample_batch(spec: Spectrum | int, grid: TimeGrid, seeds: Sequence[int]) -> ForcingBatch:
    return ForcingBatch.stack([sample_forcing(spec, grid, s) for s in seeds])


def _check_k(path: ForcingPath, k: int) -> None:
    if not 0 <= k <= path.grid.K:
        raise IndexError(f"step index {k} outside [0, {path.grid.K}]")


def _beta_at(path: ForcingPath, k: int) -> tuple[np.ndarray, np.ndarray]:
    return path.d1[:, :k].sum(axis=1), path.d2[:, :k].sum(axis=1)


def zeta(path: ForcingPath, spec: Spectrum, k: int, x):
    """Forcing field ``zeta(t_k, x)`` from prefix sums of the increments."""
    _check_k(path, k)
    b1, b2 = _beta_at(path, k)
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    for i, a_n in enumerate(spec.coeffs):
        n = i + 1
        out = out + a_n * (np.cos(n * x_arr) * b1[i] + np.sin(n * x_arr) * b2[i])
    return float(out) if out.ndim == 0 else out


def zeta_x(path: ForcingPath, spec: Spectrum, k: int, x):
    """Spatial derivative ``zeta_x(t_k, x)``."""
    _check_k(path, k)
    b1, b2 = _beta_at(path, k)
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    for i, a_n in enumerate(spec.coeffs):
        n = i + 1
        out = out + n * a_n * (-np.sin(n * x_arr) * b1[i] + np.cos(n * x_arr) * b2[i])
    return float(out) if out.ndim == 0 else out


def brownian_sup(path: ForcingPath, j: int, n: int, k: int) -> float:
    """Discrete running supremum ``max_{i <= k} |beta^{jn}(t_i)|``."""
    if not 1 <= n <= path.n_modes:
        raise ValueError(f"mode n={n} outside [1, {path.n_modes}]")
    d = path.increments(j)
    _check_k(path, k)
    if k == 0:
        return 0.0
    return float(np.max(np.abs(np.cumsum(d[n - 1, :k]))))


def increment_range(path: ForcingPath, j: int, k0: int, k1: int) -> np.ndarray:
    """``sup_{k0 <= r1 <= r2 <= k1} |beta(r2) - beta(r1)|`` for every mode, shape ``(N,)``.

    On a grid this is the max minus the min of the path over ``[t_k0, t_k1]``.
    """
    _check_k(path, k0)
    _check_k(path, k1)
    if k0 > k1:
        raise ValueError(f"empty window [{k0}, {k1}]")
    b = path.beta(j)[:, k0 : k1 + 1]
    return b.max(axis=1) - b.min(axis=1)


def mode_basis(spec: Spectrum, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``cos(n x)`` and ``sin(n x)`` on points ``x``, each of shape ``(N, len(x))``."""
    nx = np.outer(spec.modes, np.asarray(x, dtype=float))
    return np.cos(nx), np.sin(nx)


def dump_forcing(path: ForcingPath, filename: str | Path) -> None:
    """Write the binary dump: header ``(seed, T, K, N)`` then ``d1`` and ``d2`` as ``<f8``."""
    with open(filename, "wb") as fh:
        fh.write(_HEADER.pack(int(path.seed), path.grid.T, path.grid.K, path.n_modes))
        fh.write(path.d1.astype("<f8").tobytes(order="C"))
        fh.write(path.d2.astype("<f8").tobytes(order="C"))


def load_forcing(filename: str | Path) -> ForcingPath:
    raw = Path(filename).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{filename}: truncated forcing dump header")
    seed, T, K, N = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 2 * N * K * 8
    if K < 1 or N < 1 or len(raw) != expected:
        raise ValueError(f"{filename}: expected {expected} bytes for K={K}, N={N}, got {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    d1 = payload[: N * K].reshape(N, K)
    d2 = payload[N * K :].reshape(N, K)
    return ForcingPath(TimeGrid(T, K), d1, d2, seed)
