"""Cole-Hopf route: the linear multiplicative equation for ``U`` and its walkers.

``U`` solves ``dU = (eps/2) U_xx dt - (1/eps) U o dzeta`` (Stratonovich) from
``U(0) = 1`` and ``u = -eps d/dx log U`` then solves the viscous Burgers
equation. One Lie-splitting step on ``[t_k, t_{k+1}]`` is

1. ``U <- U * exp(-dzeta_k / eps)``, the exact Stratonovich flow of the noise;
2. ``U <- exp((eps/2) dt L) U``, an exact heat step.

Two heat propagators are available. ``"spectral"`` multiplies Fourier mode
``m`` by ``exp(-(eps/2) m^2 dt)``. ``"lattice"`` applies the semigroup of the
three-point Laplacian as a real-space convolution with the positive kernel
``exp(-2s) I_j(2s)``, ``s = eps dt / (2 dx^2)``; it keeps full relative
precision where ``U`` spans many orders of magnitude (small ``eps``).

Unrolling the splitting gives the walker representation used by
:func:`feynman_kac_U`: with a random walk ``W`` of step variance ``eps dt``,
the increment of step ``i`` is sampled at ``x + W_{k-1-i}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import special

from .forcing import ForcingBatch, ForcingPath, _as_batch, brownian_sup
from .spectrum import Spectrum
from .viscous import ViscousConfig

__all__ = [
    "ColeHopfError",
    "FeynmanKacOverflow",
    "ColeHopfResult",
    "forcing_value_basis",
    "heat_step",
    "colehopf_step",
    "colehopf_solve",
    "colehopf_solve_batch",
    "recover_u",
    "feynman_kac_U",
    "walker_generator",
    "lemma6_lower_bound",
]

_EXP_LIMIT = 700.0
HEAT_MODES = ("spectral", "lattice")


class ColeHopfError(RuntimeError):
    """``U`` lost positivity or overflowed; reduce ``dt`` or raise ``eps``."""


class FeynmanKacOverflow(OverflowError):
    pass


def forcing_value_basis(spec: Spectrum, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``a_n cos(n x)`` and ``a_n sin(n x)``: ``dzeta = c1 . d1 + c2 . d2``."""
    nx = np.outer(spec.modes, x)
    a = spec.a[:, None]
    return a * np.cos(nx), a * np.sin(nx)


def _zeta_increment(c1, c2, d1k, d2k):
    out = c1[0] * d1k[:, 0:1] + c2[0] * d2k[:, 0:1]
    for n in range(1, c1.shape[0]):
        out = out + (c1[n] * d1k[:, n : n + 1] + c2[n] * d2k[:, n : n + 1])
    return out


class _HeatPropagator:
    def __init__(self, cfg: ViscousConfig, mode: str):
        if mode not in HEAT_MODES:
            raise ValueError(f"heat mode must be one of {HEAT_MODES}, got {mode!r}")
        self.mode = mode
        M = cfg.M
        tau = 0.5 * cfg.epsilon * cfg.grid.dt
        if mode == "spectral":
            m = np.arange(M // 2 + 1, dtype=float)
            self.multiplier = np.exp(-tau * m * m)
            self.M = M
            return
        s = tau / (cfg.dx * cfg.dx)
        j = np.arange(M // 2 + 1)
        w = special.ive(j, 2.0 * s)
        keep = w > 1e-20 * w[0]
        J = int(np.max(np.flatnonzero(keep)))
        if J >= M // 2 - 1:
            # kernel wider than half the ring: apply the same semigroup via FFT
            lam = 2.0 * (1.0 - np.cos(np.arange(M // 2 + 1) * cfg.dx)) / (cfg.dx * cfg.dx)
            self.mode = "lattice-fft"
            self.multiplier = np.exp(-tau * lam)
            self.M = M
            return
        self.weights = w[: J + 1]

    def __call__(self, U: np.ndarray) -> np.ndarray:
        if self.mode in ("spectral", "lattice-fft"):
            return sfft.irfft(sfft.rfft(U, axis=-1) * self.multiplier, n=self.M, axis=-1)
        w = self.weights
        out = w[0] * U
        for j in range(1, len(w)):
            out = out + w[j] * (np.roll(U, j, axis=-1) + np.roll(U, -j, axis=-1))
        return out


def heat_step(U: np.ndarray, cfg: ViscousConfig, heat: str = "spectral") -> np.ndarray:
    """Exact heat propagation ``exp((eps/2) dt d_xx)`` over one time step."""
    return _HeatPropagator(cfg, heat)(np.asarray(U, dtype=float))


def _check_positive(U: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(U)):
        raise ColeHopfError(f"U overflowed at step {step}; use a larger eps or a shorter horizon")
    if not np.all(U > 0):
        raise ColeHopfError(f"U lost positivity at step {step}; dt is too large relative to eps")


def colehopf_step(
    U, cfg: ViscousConfig, path: ForcingPath, spec: Spectrum, k: int, heat: str = "spectral"
) -> np.ndarray:
    """One splitting step: noise multiplication, then exact heat propagation."""
    U = np.asarray(U, dtype=float)
    if not np.all(U > 0):
        raise ColeHopfError("colehopf_step needs a strictly positive field")
    if not 0 <= k < cfg.grid.K:
        raise IndexError(f"step {k} outside [0, {cfg.grid.K})")
    c1, c2 = forcing_value_basis(spec, cfg.x)
    n = min(spec.n_max, path.n_modes)
    dz = _zeta_increment(c1[:n], c2[:n], path.d1[None, :n, k], path.d2[None, :n, k])[0]
    out = _HeatPropagator(cfg, heat)(U * np.exp(-dz / cfg.epsilon))
    _check_positive(out, k)
    return out


@dataclass
class ColeHopfResult:
    """``min_U`` is the smallest grid value of ``U`` over all steps, per row."""

    final: np.ndarray
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    min_U: np.ndarray | None = None


def colehopf_solve_batch(
    cfg: ViscousConfig,
    forcing: ForcingBatch | ForcingPath,
    spec: Spectrum,
    *,
    heat: str = "spectral",
    save_every: int | None = None,
) -> ColeHopfResult:
    batch = _as_batch(forcing)
    if batch.grid != cfg.grid:
        raise ValueError("forcing batch and solver use different time grids")
    cfg.check_resolution(spec)
    propagate = _HeatPropagator(cfg, heat)
    n = min(spec.n_max, batch.n_modes)
    c1, c2 = forcing_value_basis(spec, cfg.x)
    c1, c2 = c1[:n] / cfg.epsilon, c2[:n] / cfg.epsilon
    U = np.ones((batch.size, cfg.M))
    res = ColeHopfResult(final=U, min_U=np.ones(batch.size))
    if save_every:
        res.times.append(0.0)
        res.snapshots.append(U.copy())
    K = cfg.grid.K
    for k in range(K):
        U = propagate(U * np.exp(-_zeta_increment(c1, c2, batch.d1[:, :n, k], batch.d2[:, :n, k])))
        _check_positive(U, k)
        np.minimum(res.min_U, U.min(axis=1), out=res.min_U)
        if save_every and ((k + 1) % save_every == 0 or k + 1 == K):
            res.times.append(cfg.grid.time(k + 1))
            res.snapshots.append(U.copy())
    res.final = U
    return res


def colehopf_solve(
    cfg: ViscousConfig,
    path: ForcingPath,
    spec: Spectrum,
    *,
    heat: str = "spectral",
    save_every: int | None = None,
) -> ColeHopfResult:
    res = colehopf_solve_batch(cfg, path, spec, heat=heat, save_every=save_every)
    res.final = res.final[0]
    res.snapshots = [s[0] for s in res.snapshots]
    return res


def recover_u(U, epsilon: float) -> np.ndarray:
    """``u_j = -eps (log U_{j+1} - log U_{j-1}) / (2 dx)`` on the periodic grid (last axis)."""
    U = np.asarray(U, dtype=float)
    if not np.all(U > 0):
        raise ColeHopfError("recover_u needs a strictly positive field")
    M = U.shape[-1]
    dx = 2.0 * math.pi / M
    logU = np.log(U)
    return -epsilon * (np.roll(logU, -1, axis=-1) - np.roll(logU, 1, axis=-1)) / (2.0 * dx)


def walker_generator(walker_seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(walker_seed), int(index)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def _walker_weights_exponent(
    spec: Spectrum, path: ForcingPath, epsilon: float, k: int, x: float, walker_seed: int, lo: int, hi: int
) -> np.ndarray:
    sd = math.sqrt(epsilon * path.grid.dt)
    steps = np.empty((hi - lo, k))
    for i in range(lo, hi):
        steps[i - lo] = walker_generator(walker_seed, i).standard_normal(k)
    # offsets[:, i] = W_{k-1-i}; the increment of the last step is sampled at W_0 = 0
    W = np.zeros((hi - lo, k))
    if k > 1:
        np.cumsum(steps[:, : k - 1] * sd, axis=1, out=W[:, 1:])
    offsets = x + W[:, ::-1]
    expo = np.zeros(hi - lo)
    for idx in range(min(spec.n_max, path.n_modes)):
        n = idx + 1
        a_n = spec.coeffs[idx]
        if a_n == 0.0:
            continue
        phase = n * offsets
        expo += a_n * (np.cos(phase) @ path.d1[idx, :k] + np.sin(phase) @ path.d2[idx, :k])
    return -expo / epsilon


def feynman_kac_U(
    spec: Spectrum,
    path: ForcingPath,
    cfg: ViscousConfig,
    t_index: int,
    x: float,
    n_walkers: int,
    walker_seed: int,
    *,
    chunk: int = 1000,
) -> tuple[float, float]:
    """Monte Carlo estimate of ``U(t_k, x)`` with the forcing increments held fixed.

    Averages ``exp{-(1/eps) sum_n a_n sum_i [cos(n(x + W)) d1 + sin(n(x + W)) d2]}``
    over independent walkers whose step ``j`` is keyed by ``(walker_seed, j)``.
    Returns ``(estimate, standard_error)``.
    """
    if not 0 <= t_index <= path.grid.K:
        raise IndexError(f"t_index {t_index} outside [0, {path.grid.K}]")
    if n_walkers < 2:
        raise ValueError(f"need at least 2 walkers, got {n_walkers}")
    if t_index == 0:
        return 1.0, 0.0
    parts = [
        _walker_weights_exponent(
            spec, path, cfg.epsilon, t_index, x, walker_seed, lo, min(lo + chunk, n_walkers)
        )
        for lo in range(0, n_walkers, chunk)
    ]
    expo = np.concatenate(parts)
    top = float(np.max(expo))
    if top > _EXP_LIMIT:
        raise FeynmanKacOverflow(
            f"walker exponent {top:.1f} overflows double precision; "
            "use a larger eps or a shorter horizon"
        )
    w = np.exp(expo)
    est = float(np.mean(w))
    # identical weights (e.g. one step) carry no sampling error
    se = 0.0 if np.all(w == w[0]) else float(np.std(w, ddof=1) / math.sqrt(n_walkers))
    return est, se


def lemma6_lower_bound(spec: Spectrum, path: ForcingPath, cfg: ViscousConfig, t_index: int | None = None) -> float:
    """Pathwise floor ``exp{-(1/eps) sum_n |a_n| (1 + eps n^2 T)(S1_n(T) + S2_n(T))}``.

    ``T = t_{t_index}`` (the horizon by default); ``S`` are discrete running suprema.
    """
    k = path.grid.K if t_index is None else t_index
    T = path.grid.time(k)
    eps = cfg.epsilon
    total = 0.0
    for idx, a_n in enumerate(spec.coeffs[: path.n_modes]):
        n = idx + 1
        sups = brownian_sup(path, 1, n, k) + brownian_sup(path, 2, n, k)
        total += abs(a_n) * (1.0 + eps * n * n * T) * sups
    return math.exp(-total / eps)
