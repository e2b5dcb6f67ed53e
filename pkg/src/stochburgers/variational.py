"""Inviscid solution by minimizing the discrete action along backward paths.

For a path ``xi_0 .. xi_K`` with ``xi_K = x`` held fixed the discrete action is::

    A(xi) = sum_k (xi_{k+1} - xi_k)^2 / (2 dt)
          + sum_n a_n sum_k [cos(n xi_k) d1[n, k] + sin(n xi_k) d2[n, k]]

with the stochastic integrals taken at the left point. The left end is free,
which encodes the zero initial condition. At a minimizer the velocity
``v_k = (xi_{k+1} - xi_k)/dt`` equals the accumulated forcing
``-sum_n n a_n sum_{i<=k} [sin(n xi_i) d1 - cos(n xi_i) d2]`` and the inviscid
solution is ``u(t, x) = v_{K-1}``.

The action Hessian is tridiagonal (kinetic part plus a diagonal forcing part),
so every linear solve below is banded and O(K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .forcing import ForcingPath, TimeGrid, increment_range
from .spectrum import Spectrum

__all__ = [
    "MinimizingPath",
    "MinimizationError",
    "MinimizeResult",
    "action",
    "action_gradient",
    "minimize_action",
    "inviscid_u",
    "inviscid_u_second_order",
    "euler_lagrange_residual",
    "theorem23_C",
    "theorem23_pathwise_bound",
]


@dataclass(frozen=True, eq=False)
class MinimizingPath:
    """Discrete trajectory ``xi_0 .. xi_K`` (unwrapped angles) ending at ``xi_K = x``."""

    xi: np.ndarray
    grid: TimeGrid

    def __post_init__(self) -> None:
        xi = np.array(self.xi, dtype=float)
        if xi.shape != (self.grid.K + 1,):
            raise ValueError(f"path needs K+1={self.grid.K + 1} points, got {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise ValueError("path contains non-finite entries")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def x(self) -> float:
        return float(self.xi[-1])

    @classmethod
    def constant(cls, x: float, grid: TimeGrid) -> "MinimizingPath":
        return cls(np.full(grid.K + 1, float(x)), grid)


class MinimizationError(RuntimeError):
    """No start reached the gradient tolerance; ``best`` holds the lowest-action attempt."""

    def __init__(self, message: str, best: "MinimizeResult"):
        super().__init__(message)
        self.best = best


@dataclass
class MinimizeResult:
    path: MinimizingPath
    action: float
    grad_norm: float
    iterations: int
    start_index: int
    n_converged: int
    converged: bool


def _check_grid(xi: MinimizingPath, path: ForcingPath) -> None:
    if xi.grid != path.grid:
        raise ValueError(
            f"path grid (T={xi.grid.T}, K={xi.grid.K}) does not match forcing grid "
            f"(T={path.grid.T}, K={path.grid.K})"
        )


def _forcing_terms(xi_body: np.ndarray, path: ForcingPath, spec: Spectrum):
    """Potential, its derivative and second derivative at nodes ``xi_0 .. xi_{K-1}``."""
    pot = np.zeros_like(xi_body)
    d1v = np.zeros_like(xi_body)
    d2v = np.zeros_like(xi_body)
    for idx in range(min(spec.n_max, path.n_modes)):
        a_n = spec.coeffs[idx]
        if a_n == 0.0:
            continue
        n = idx + 1
        c = np.cos(n * xi_body)
        s = np.sin(n * xi_body)
        b1 = path.d1[idx]
        b2 = path.d2[idx]
        pot += a_n * (c * b1 + s * b2)
        d1v += n * a_n * (-s * b1 + c * b2)
        d2v += -n * n * a_n * (c * b1 + s * b2)
    return pot, d1v, d2v


def _action_from_body(body: np.ndarray, x: float, path: ForcingPath, spec: Spectrum) -> float:
    xi = np.append(body, x)
    dxi = np.diff(xi)
    pot, _, _ = _forcing_terms(body, path, spec)
    return math.fsum(dxi * dxi) / (2.0 * path.grid.dt) + math.fsum(pot)


def _gradient_from_body(body: np.ndarray, x: float, path: ForcingPath, spec: Spectrum):
    dt = path.grid.dt
    xi = np.append(body, x)
    v = np.diff(xi) / dt
    _, force, curv = _forcing_terms(body, path, spec)
    g = -v + force
    g[1:] += v[:-1]
    return g, curv


def action(xi: MinimizingPath, path: ForcingPath, spec: Spectrum) -> float:
    """Discrete action of ``xi`` under the forcing ``path``."""
    _check_grid(xi, path)
    return _action_from_body(xi.xi[:-1], xi.x, path, spec)


def action_gradient(xi: MinimizingPath, path: ForcingPath, spec: Spectrum) -> np.ndarray:
    """Exact gradient with respect to the free nodes ``xi_0 .. xi_{K-1}``."""
    _check_grid(xi, path)
    return _gradient_from_body(xi.xi[:-1], xi.x, path, spec)[0]


def _kinetic_banded(K: int, dt: float, diag_extra: np.ndarray | None = None) -> np.ndarray:
    # upper banded storage of the K x K kinetic Hessian: Neumann at node 0, Dirichlet past K-1
    ab = np.empty((2, K))
    ab[1] = 2.0 / dt
    ab[1, 0] = 1.0 / dt
    ab[0] = -1.0 / dt
    ab[0, 0] = 0.0
    if diag_extra is not None:
        ab[1] = ab[1] + diag_extra
    return ab


def _descend(body, x, path, spec, grad_tol, max_iter, trace=None):
    K = path.grid.K
    dt = path.grid.dt
    kinetic = _kinetic_banded(K, dt)
    f = _action_from_body(body, x, path, spec)
    g, curv = _gradient_from_body(body, x, path, spec)
    gnorm = float(np.max(np.abs(g)))
    it = 0
    while gnorm > grad_tol and it < max_iter:
        it += 1
        direction = None
        try:
            # Newton step when the full tridiagonal Hessian is positive definite
            direction = -solveh_banded(_kinetic_banded(K, dt, curv), g)
        except (LinAlgError, ValueError):
            direction = None
        if direction is None or not np.all(np.isfinite(direction)) or direction @ g >= 0:
            direction = -solveh_banded(kinetic, g)
        slope = float(direction @ g)
        step = 1.0
        accepted = False
        while step > 1e-14:
            trial = body + step * direction
            f_trial = _action_from_body(trial, x, path, spec)
            if f_trial <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        body = trial
        f = f_trial
        if trace is not None:
            trace.append(f)
        g, curv = _gradient_from_body(body, x, path, spec)
        gnorm = float(np.max(np.abs(g)))
    return body, f, gnorm, it


def minimize_action(
    path: ForcingPath,
    spec: Spectrum,
    x: float,
    restarts: int = 4,
    opt_seed: int = 0,
    *,
    grad_tol: float = 1e-8,
    max_iter: int = 10_000,
    trace: list | None = None,
) -> MinimizeResult:
    """Multi-start minimization of the action over paths ending at ``x``.

    Start 0 is the constant path; the others are linear ramps from a random
    offset in ``[-pi, pi)`` plus a small smooth bump. Each start runs a
    preconditioned descent with Armijo backtracking. Returns the converged
    start with the lowest action (ties go to the lower index).
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    grid = path.grid
    K = grid.K
    s = np.arange(K) / K
    rng = np.random.default_rng(np.random.SeedSequence([int(opt_seed)]))
    starts = [np.full(K, float(x))]
    for _ in range(restarts - 1):
        offset = rng.uniform(-math.pi, math.pi)
        bump = rng.uniform(-0.1, 0.1)
        starts.append(x + offset * (1.0 - s) + bump * np.sin(math.pi * s))

    best = None
    best_conv = None
    n_conv = 0
    for i, body0 in enumerate(starts):
        tr = [] if trace is not None else None
        body, f, gnorm, it = _descend(body0, float(x), path, spec, grad_tol, max_iter, tr)
        ok = gnorm <= grad_tol
        res = MinimizeResult(
            MinimizingPath(np.append(body, x), grid), f, gnorm, it, i, 0, ok
        )
        if trace is not None:
            trace.append(tr)
        if best is None or f < best.action:
            best = res
        if ok:
            n_conv += 1
            if best_conv is None or f < best_conv.action:
                best_conv = res
    if best_conv is None:
        best.n_converged = 0
        raise MinimizationError(
            f"no start reached grad_tol={grad_tol:g} within {max_iter} iterations "
            f"(best gradient {best.grad_norm:.3e})",
            best,
        )
    best_conv.n_converged = n_conv
    return best_conv


def inviscid_u(xi_star: MinimizingPath) -> float:
    """Terminal velocity ``(xi_K - xi_{K-1}) / dt`` of a minimizer."""
    if xi_star.grid.K < 1:
        raise ValueError("need at least one step")
    return float((xi_star.xi[-1] - xi_star.xi[-2]) / xi_star.grid.dt)


def inviscid_u_second_order(xi_star: MinimizingPath) -> float:
    """One-sided second-order difference ``(3 xi_K - 4 xi_{K-1} + xi_{K-2}) / (2 dt)``."""
    if xi_star.grid.K < 2:
        raise ValueError("need at least two steps")
    xi = xi_star.xi
    return float((3.0 * xi[-1] - 4.0 * xi[-2] + xi[-3]) / (2.0 * xi_star.grid.dt))


def euler_lagrange_residual(
    xi_star: MinimizingPath, path: ForcingPath, spec: Spectrum, rule: str = "left"
) -> float:
    """``max_k |v_k + sum_n n a_n sum_{i<=k} [sin(n xi_i) d1_i - cos(n xi_i) d2_i]|``.

    ``rule="midpoint"`` samples the integrands at ``(xi_i + xi_{i+1})/2``; it is a
    diagnostic for the integral convention, not a consistent residual.
    """
    _check_grid(xi_star, path)
    xi = xi_star.xi
    if rule == "left":
        nodes = xi[:-1]
    elif rule == "midpoint":
        nodes = 0.5 * (xi[:-1] + xi[1:])
    else:
        raise ValueError(f"rule must be 'left' or 'midpoint', got {rule!r}")
    _, force, _ = _forcing_terms(nodes, path, spec)
    v = np.diff(xi) / path.grid.dt
    r = v - np.cumsum(force)
    return float(np.max(np.abs(r)))


def theorem23_C(path: ForcingPath, spec: Spectrum, s: float, t: float) -> float:
    """``C(s, t) = sum_n n^2 |a_n| (R1_n + R2_n)`` with ``R`` the increment range on ``[s, t]``."""
    if not 0 <= s <= t:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    k0 = path.grid.index_of(s)
    k1 = path.grid.index_of(t)
    r1 = increment_range(path, 1, k0, k1)
    r2 = increment_range(path, 2, k0, k1)
    n = min(spec.n_max, path.n_modes)
    w = spec.modes[:n] ** 2 * np.abs(spec.a[:n])
    return math.fsum(w * (r1[:n] + r2[:n]))


def theorem23_pathwise_bound(path: ForcingPath, spec: Spectrum, t: float) -> float:
    """``10 exp(2 C(t - 1, t))``, a pathwise ceiling on ``sup_x |u(t, x)|``."""
    if t < 1:
        raise ValueError(f"the bound needs a unit look-back window, got t={t}")
    return 10.0 * math.exp(2.0 * theorem23_C(path, spec, t - 1.0, t))
