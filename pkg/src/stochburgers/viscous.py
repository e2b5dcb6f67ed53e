"""Explicit finite-difference solver for the viscous stochastic Burgers equation.

Scheme (periodic grid ``x_j = 2 pi j / M``)::

    u' = u + dt * [ (eps/2) D2 u - (F_{j+1/2} - F_{j-1/2}) / dx ] + dzeta_x
    F_{j+1/2} = (u_j^2 + u_{j+1}^2) / 4

``D2`` is the three-point Laplacian and ``dzeta_x`` the exact forcing increment
over the step. The flux form telescopes, so the grid sum of ``u`` changes only
by the grid sum of the forcing, which vanishes for ``M > 2N``.

All routines accept a batch of independent realizations as arrays of shape
``(B, M)``; rows never interact, so a row's result does not depend on which
batch it was computed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forcing import ForcingBatch, ForcingPath, TimeGrid, _as_batch
from .spectrum import Spectrum

__all__ = [
    "ViscousConfig",
    "StabilityError",
    "NonFiniteError",
    "ViscousResult",
    "grid_points",
    "forcing_gradient_basis",
    "viscous_step",
    "viscous_solve",
    "viscous_solve_batch",
    "field_stats",
]

# keeps the advective limit finite at u == 0
_ADVECTION_FLOOR = 1e-12


class StabilityError(RuntimeError):
    """Time step exceeds the explicit stability limit."""

    def __init__(self, step: int, dt: float, suggested_dt: float, rows=None):
        self.step = step
        self.dt = dt
        self.suggested_dt = suggested_dt
        self.rows = rows
        super().__init__(
            f"stability violated at step {step}: dt={dt:.3e} exceeds limit; "
            f"use dt <= {suggested_dt:.3e}"
        )


class NonFiniteError(RuntimeError):
    """A field value became NaN or infinite."""

    def __init__(self, step: int, rows=None):
        self.step = step
        self.rows = rows
        super().__init__(f"non-finite field value at step {step}")


@dataclass(frozen=True)
class ViscousConfig:
    """Numerical parameters shared by the viscous and Cole-Hopf solvers.

    ``nonlinear=False`` switches the flux off, leaving the stochastic heat equation.
    """

    epsilon: float
    M: int
    grid: TimeGrid
    cfl_safety: float = 1.0
    nonlinear: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"viscosity epsilon must be positive, got {self.epsilon}")
        if self.M < 3:
            raise ValueError(f"need at least 3 grid points, got M={self.M}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")

    @property
    def dx(self) -> float:
        return 2.0 * math.pi / self.M

    @property
    def x(self) -> np.ndarray:
        return grid_points(self.M)

    def stable_dt(self, umax: float) -> float:
        dx = self.dx
        return self.cfl_safety * min(dx * dx / self.epsilon, dx / (umax + _ADVECTION_FLOOR))

    def check_resolution(self, spec: Spectrum) -> None:
        if self.M <= 2 * spec.n_max:
            raise ValueError(
                f"grid too coarse: M={self.M} must exceed 2N={2 * spec.n_max} "
                "to resolve every forcing mode"
            )


def grid_points(M: int) -> np.ndarray:
    return 2.0 * math.pi * np.arange(M) / M


def forcing_gradient_basis(spec: Spectrum, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``-n a_n sin(n x)`` and ``n a_n cos(n x)``: ``dzeta_x = c1 . d1 + c2 . d2``."""
    nx = np.outer(spec.modes, x)
    w = (spec.modes * spec.a)[:, None]
    return -w * np.sin(nx), w * np.cos(nx)


def _combine(c1: np.ndarray, c2: np.ndarray, d1k: np.ndarray, d2k: np.ndarray) -> np.ndarray:
    # d1k, d2k: (B, N); explicit loop keeps per-row arithmetic independent of B
    out = c1[0] * d1k[:, 0:1] + c2[0] * d2k[:, 0:1]
    for n in range(1, c1.shape[0]):
        out = out + (c1[n] * d1k[:, n : n + 1] + c2[n] * d2k[:, n : n + 1])
    return out


def _rhs_update(u: np.ndarray, cfg: ViscousConfig, dforce: np.ndarray) -> np.ndarray:
    dx = cfg.dx
    dt = cfg.grid.dt
    up = np.roll(u, -1, axis=-1)
    um = np.roll(u, 1, axis=-1)
    drift = (0.5 * cfg.epsilon / (dx * dx)) * ((up - u) - (u - um))
    if cfg.nonlinear:
        sq = u * u
        flux = 0.25 * (sq + np.roll(sq, -1, axis=-1))
        drift = drift - (flux - np.roll(flux, 1, axis=-1)) / dx
    return u + dt * drift + dforce


def viscous_step(u, cfg: ViscousConfig, path: ForcingPath, spec: Spectrum, k: int) -> np.ndarray:
    """Advance one field by the step ``[t_k, t_{k+1}]``."""
    u = np.asarray(u, dtype=float)
    if path.grid != cfg.grid:
        raise ValueError("forcing path and solver use different time grids")
    if not 0 <= k < cfg.grid.K:
        raise IndexError(f"step {k} outside [0, {cfg.grid.K})")
    umax = float(np.max(np.abs(u)))
    if not math.isfinite(umax):
        raise NonFiniteError(k)
    if cfg.grid.dt > cfg.stable_dt(umax):
        raise StabilityError(k, cfg.grid.dt, cfg.stable_dt(umax))
    c1, c2 = forcing_gradient_basis(spec, cfg.x)
    n = min(spec.n_max, path.n_modes)
    dforce = _combine(c1[:n], c2[:n], path.d1[None, :n, k], path.d2[None, :n, k])[0]
    out = _rhs_update(u, cfg, dforce)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(k)
    return out


@dataclass
class ViscousResult:
    """Outcome of a batched solve.

    ``snapshots[i]`` holds the batch at time ``times[i]``. ``mean_drift`` is the
    largest absolute spatial mean seen per row, ``sup_abs`` the largest ``|u|``.
    Rows flagged in ``failed`` were frozen at zero once they broke down.
    """

    final: np.ndarray
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    mean_drift: np.ndarray | None = None
    sup_abs: np.ndarray | None = None
    failed: np.ndarray | None = None
    fail_step: np.ndarray | None = None
    fail_reason: list[str] = field(default_factory=list)


def viscous_solve_batch(
    cfg: ViscousConfig,
    forcing: ForcingBatch | ForcingPath,
    spec: Spectrum,
    *,
    u0: np.ndarray | None = None,
    save_every: int | None = None,
    on_error: str = "raise",
) -> ViscousResult:
    """Integrate a batch from ``u(0) = u0`` (zero by default) to the grid horizon.

    ``on_error="mask"`` records unstable or non-finite rows in ``result.failed``
    instead of raising; the remaining rows are unaffected.
    """
    batch = _as_batch(forcing)
    if batch.grid != cfg.grid:
        raise ValueError("forcing batch and solver use different time grids")
    if on_error not in ("raise", "mask"):
        raise ValueError(f"on_error must be 'raise' or 'mask', got {on_error!r}")
    cfg.check_resolution(spec)
    B = batch.size
    K = cfg.grid.K
    dt = cfg.grid.dt
    n = min(spec.n_max, batch.n_modes)
    c1, c2 = forcing_gradient_basis(spec, cfg.x)
    c1, c2 = c1[:n], c2[:n]

    u = np.zeros((B, cfg.M)) if u0 is None else np.array(np.broadcast_to(u0, (B, cfg.M)), dtype=float)
    result = ViscousResult(final=u)
    result.mean_drift = np.abs(u.mean(axis=1))
    result.sup_abs = np.max(np.abs(u), axis=1)
    failed = np.zeros(B, dtype=bool)
    fail_step = np.full(B, -1)
    reasons = [""] * B
    if save_every:
        result.times.append(0.0)
        result.snapshots.append(u.copy())

    dx = cfg.dx
    diff_limit = cfg.cfl_safety * dx * dx / cfg.epsilon
    for k in range(K):
        umax = np.max(np.abs(u), axis=1)
        adv_limit = cfg.cfl_safety * dx / (umax + _ADVECTION_FLOOR)
        bad_nan = ~np.isfinite(umax)
        bad_cfl = ~bad_nan & (dt > np.minimum(diff_limit, adv_limit))
        bad = (bad_nan | bad_cfl) & ~failed
        if bad.any():
            rows = np.flatnonzero(bad)
            if on_error == "raise":
                if bad_nan[rows].any():
                    raise NonFiniteError(k, rows.tolist())
                suggested = float(np.min(np.minimum(diff_limit, adv_limit[rows])))
                raise StabilityError(k, dt, suggested, rows.tolist())
            for r in rows:
                reasons[r] = (
                    "non-finite value"
                    if bad_nan[r]
                    else f"stability: dt={dt:.3e} > {min(diff_limit, adv_limit[r]):.3e}"
                )
            failed |= bad
            fail_step[rows] = k
            u[rows] = 0.0
        dforce = _combine(c1, c2, batch.d1[:, :n, k], batch.d2[:, :n, k])
        u = _rhs_update(u, cfg, dforce)
        if failed.any():
            u[failed] = 0.0
        np.maximum(result.mean_drift, np.abs(u.mean(axis=1)), out=result.mean_drift)
        np.maximum(result.sup_abs, np.where(failed, 0.0, np.max(np.abs(u), axis=1)), out=result.sup_abs)
        if save_every and ((k + 1) % save_every == 0 or k + 1 == K):
            result.times.append(cfg.grid.time(k + 1))
            result.snapshots.append(u.copy())

    bad_end = ~np.all(np.isfinite(u), axis=1) & ~failed
    if bad_end.any():
        if on_error == "raise":
            raise NonFiniteError(K, np.flatnonzero(bad_end).tolist())
        for r in np.flatnonzero(bad_end):
            reasons[r] = "non-finite value"
        failed |= bad_end
        fail_step[bad_end] = K
        u[bad_end] = 0.0

    result.final = u
    result.failed = failed
    result.fail_step = fail_step
    result.fail_reason = reasons
    return result


def viscous_solve(
    cfg: ViscousConfig,
    path: ForcingPath,
    spec: Spectrum,
    *,
    u0: np.ndarray | None = None,
    save_every: int | None = None,
) -> ViscousResult:
    """Single-realization solve; arrays in the result drop the batch axis."""
    res = viscous_solve_batch(cfg, path, spec, u0=u0, save_every=save_every)
    res.final = res.final[0]
    res.snapshots = [s[0] for s in res.snapshots]
    return res


def field_stats(u: np.ndarray) -> dict[str, float]:
    u = np.asarray(u, dtype=float)
    return {
        "mean": float(np.mean(u)),
        "min": float(np.min(u)),
        "max": float(np.max(u)),
        "l2": float(np.sqrt(np.mean(u * u))),
    }
