"""Deterministic parallel ensembles.

Realization ``r`` of a run always uses the seed ``realization_seed(master, r)``
and is computed inside the fixed block ``r // block_size``. Blocks are the unit
of work handed to processes, so the worker count changes scheduling only, never
the arithmetic. Block results come back in index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .colehopf import colehopf_solve_batch, feynman_kac_U, lemma6_lower_bound, recover_u
from .forcing import ForcingBatch, TimeGrid, sample_batch, sample_forcing
from .moments import per_realization_moments
from .spectrum import Spectrum
from .variational import (
    MinimizationError,
    euler_lagrange_residual,
    inviscid_u,
    minimize_action,
    theorem23_pathwise_bound,
)
from .viscous import ViscousConfig, viscous_solve_batch

__all__ = [
    "realization_seed",
    "block_ranges",
    "parallel_map",
    "viscous_moment_block",
    "crosscheck_block",
    "sup_block",
    "lemma6_block",
    "fk_points_block",
    "variational_block",
    "theorem11_block",
]

T = TypeVar("T")


def realization_seed(master_seed: int, index: int) -> int:
    """63-bit seed of realization ``index``; a pure function of its arguments."""
    hi, lo = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return (int(hi) << 31) ^ int(lo)


def block_ranges(n: int, block_size: int) -> list[range]:
    if block_size < 1:
        raise ValueError(f"block_size must be positive, got {block_size}")
    return [range(lo, min(lo + block_size, n)) for lo in range(0, n, block_size)]


def parallel_map(fn: Callable[..., T], tasks: Sequence, workers: int = 1) -> list[T]:
    """``[fn(t) for t in tasks]``, optionally spread over processes; order preserved."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _seeds(master_seed: int, indices: Iterable[int]) -> list[int]:
    return [realization_seed(master_seed, r) for r in indices]


def viscous_moment_block(task: dict) -> list[dict]:
    """Per-realization spatial moments of the viscous solution at the horizon."""
    spec = Spectrum(tuple(task["a"]))
    grid = TimeGrid(task["T"], task["K"])
    cfg = ViscousConfig(task["epsilon"], task["M"], grid, task.get("cfl_safety", 1.0))
    idx = list(task["indices"])
    seeds = _seeds(task["master_seed"], idx)
    res = viscous_solve_batch(cfg, sample_batch(spec, grid, seeds), spec, on_error="mask")
    out = []
    for b, (r, s) in enumerate(zip(idx, seeds)):
        rec = {"index": r, "seed": s, "epsilon": cfg.epsilon}
        if res.failed[b]:
            rec.update(status="failed", error=res.fail_reason[b], step=int(res.fail_step[b]))
        else:
            row = res.final[b : b + 1]
            rec.update(
                status="ok",
                moments={str(p): float(per_realization_moments(row, p)[0]) for p in task["orders"]},
                mean_drift=float(res.mean_drift[b]),
                sup_abs=float(res.sup_abs[b]),
            )
        out.append(rec)
    return out


def crosscheck_block(task: dict) -> list[dict]:
    """Relative L2 gap between viscous and Cole-Hopf ``u`` at two resolutions."""
    spec = Spectrum(tuple(task["a"]))
    K, M, eps = task["K"], task["M"], task["epsilon"]
    refine = int(task.get("refine", 2))
    idx = list(task["indices"])
    seeds = _seeds(task["master_seed"], idx)
    fine_grid = TimeGrid(task["T"], K * refine)
    fine_paths = [sample_forcing(spec, fine_grid, s) for s in seeds]

    def gap(paths, m):
        batch = ForcingBatch.stack(paths)
        cfg = ViscousConfig(eps, m, batch.grid, task.get("cfl_safety", 1.0))
        res = viscous_solve_batch(cfg, batch, spec, on_error="mask")
        u = recover_u(colehopf_solve_batch(cfg, batch, spec).final, eps)
        v = res.final
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.sqrt(np.sum((v - u) ** 2, axis=1) / np.sum(v * v, axis=1))
        return rel, res.failed, res.fail_reason

    coarse, bad_c, why_c = gap([p.coarsen(refine) for p in fine_paths], M)
    if refine > 1:
        fine, bad_f, why_f = gap(fine_paths, M * refine)
    else:
        fine, bad_f, why_f = coarse, bad_c, why_c
    out = []
    for b, (r, s) in enumerate(zip(idx, seeds)):
        rec = {"index": r, "seed": s, "epsilon": eps}
        if bad_c[b] or bad_f[b]:
            rec.update(status="failed", error=why_c[b] or why_f[b])
        else:
            rec.update(
                status="ok",
                rel_l2=float(coarse[b]),
                rel_l2_refined=float(fine[b]),
                decreased=bool(fine[b] < coarse[b]),
            )
        out.append(rec)
    return out


def sup_block(task: dict) -> list[dict]:
    """Discrete Brownian suprema ``S^{jn}(t)`` at the requested times, per realization."""
    n_modes = task["n_modes"]
    grid = TimeGrid(task["T"], task["K"])
    ks = [grid.index_of(t) for t in task["times"]]
    out = []
    for r in task["indices"]:
        s = realization_seed(task["master_seed"], r)
        path = sample_forcing(n_modes, grid, s)
        rows = []
        for d in (path.d1, path.d2):
            running = np.maximum.accumulate(np.abs(np.cumsum(d, axis=1)), axis=1)
            rows.append(np.array([[running[n, k - 1] if k > 0 else 0.0 for k in ks] for n in range(n_modes)]))
        # sups[t_index][stream], streams ordered (j=1, n=1..N), (j=2, n=1..N)
        sups = np.concatenate(rows, axis=0).T
        out.append({"index": r, "seed": s, "sups": sups.tolist()})
    return out


def lemma6_block(task: dict) -> list[dict]:
    spec = Spectrum(tuple(task["a"]))
    grid = TimeGrid(task["T"], task["K"])
    cfg = ViscousConfig(task["epsilon"], task["M"], grid)
    idx = list(task["indices"])
    seeds = _seeds(task["master_seed"], idx)
    batch = sample_batch(spec, grid, seeds)
    res = colehopf_solve_batch(cfg, batch, spec, heat=task.get("heat", "spectral"))
    out = []
    for b, (r, s) in enumerate(zip(idx, seeds)):
        bound = lemma6_lower_bound(spec, batch.path(b), cfg)
        out.append({"index": r, "seed": s, "min_U": float(res.min_U[b]), "bound": bound})
    return out


def fk_points_block(task: dict) -> list[dict]:
    """Walker estimates of ``U`` against the splitting solver at sampled ``(t, x)``."""
    spec = Spectrum(tuple(task["a"]))
    grid = TimeGrid(task["T"], task["K"])
    cfg = ViscousConfig(task["epsilon"], task["M"], grid)
    n_points = task["n_points"]
    out = []
    for r in task["indices"]:
        s = realization_seed(task["master_seed"], r)
        path = sample_forcing(spec, grid, s)
        pick = np.random.default_rng(np.random.SeedSequence([task["master_seed"], r, 1]))
        ks = np.sort(pick.integers(1, grid.K + 1, size=n_points))
        js = pick.integers(0, cfg.M, size=n_points)
        res = colehopf_solve_batch(cfg, path, spec, save_every=1)
        for i, (k, j) in enumerate(zip(ks, js)):
            split = float(res.snapshots[int(k)][0, int(j)])
            est, se = feynman_kac_U(
                spec, path, cfg, int(k), float(cfg.x[j]), task["n_walkers"],
                realization_seed(task["master_seed"] + 1, r * 1000 + i),
            )
            out.append(
                {
                    "index": r,
                    "seed": s,
                    "t": grid.time(int(k)),
                    "x": float(cfg.x[j]),
                    "estimate": est,
                    "std_error": se,
                    "n_walkers": task["n_walkers"],
                    "split_U": split,
                    "z": (est - split) / se if se > 0 else 0.0,
                }
            )
    return out


def variational_block(task: dict) -> list[dict]:
    """Variational ``u`` at several ``x`` next to Cole-Hopf ``u`` for each viscosity.

    Cole-Hopf runs on the full path with the lattice heat propagator; the action
    is minimized on the same path coarsened by ``var_coarsen``.
    """
    spec = Spectrum(tuple(task["a"]))
    grid = TimeGrid(task["T"], task["K"])
    M = task["M"]
    x_idx = [int(round(j)) for j in np.linspace(0, M, task["n_x"], endpoint=False)]
    out = []
    for r in task["indices"]:
        s = realization_seed(task["master_seed"], r)
        path = sample_forcing(spec, grid, s)
        vpath = path.coarsen(task.get("var_coarsen", 1))
        ch = {}
        for eps in task["epsilons"]:
            cfg = ViscousConfig(eps, M, grid)
            u = recover_u(colehopf_solve_batch(cfg, path, spec, heat=task.get("heat", "lattice")).final[0], eps)
            ux = (np.roll(u, -1) - np.roll(u, 1)) / (2.0 * cfg.dx)
            ch[eps] = (u, ux)
        xs = 2.0 * math.pi * np.asarray(x_idx) / M
        sup_u = 0.0
        for j, x in zip(x_idx, xs):
            rec = {"index": r, "seed": s, "x": float(x), "t": grid.T}
            try:
                m = minimize_action(vpath, spec, float(x), task["restarts"], opt_seed=realization_seed(s, j))
            except MinimizationError as exc:
                m = exc.best
                rec["converged"] = False
            else:
                rec["converged"] = True
            uv = inviscid_u(m.path)
            sup_u = max(sup_u, abs(uv))
            rec.update(
                action=m.action,
                u=uv,
                el_residual=euler_lagrange_residual(m.path, vpath, spec),
                n_restarts_used=m.n_converged,
                colehopf={str(e): {"u": float(ch[e][0][j]), "u_x": float(ch[e][1][j])} for e in task["epsilons"]},
            )
            out.append(rec)
        if grid.T >= 1.0:
            out.append(
                {
                    "index": r,
                    "seed": s,
                    "kind": "sup",
                    "sup_abs_u": sup_u,
                    "pathwise_bound": theorem23_pathwise_bound(vpath, spec, grid.T),
                }
            )
    return out


def theorem11_block(task: dict) -> list[dict]:
    task = dict(task, orders=[])
    return [
        {"index": rec["index"], "seed": rec["seed"], "status": rec["status"], "sup_abs": rec.get("sup_abs")}
        for rec in viscous_moment_block(task)
    ]
