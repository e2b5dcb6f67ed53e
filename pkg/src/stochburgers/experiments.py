"""Configuration-driven experiments and their on-disk results.

A config file is TOML: common keys at the top level, a ``[spectrum]`` table and
an optional table named after the experiment holding its options::

    experiment = "moment_convergence"
    T = 1.0
    K = 4000
    M = 256
    epsilon = 0.05            # or a list: epsilon = [0.4, 0.2, 0.1, 0.05]
    n_realizations = 2000
    master_seed = 20240101
    workers = 4
    output = "runs/moments"

    [spectrum]
    a = [0.5]                 # or c = 1.0, q = 3.0, n_max = 4

    [moment_convergence]
    orders = [1, 2, 3, 4]

Every run writes ``results.jsonl`` (one record per realization or summary
row, no timing data), ``summary.csv`` and ``manifest.json`` into the output
directory. The environment variable ``STOCHBURGERS_OUTPUT`` overrides the
output directory; nothing else is read from the environment.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .colehopf import ColeHopfError, colehopf_solve, recover_u
from .ensemble import (
    block_ranges,
    crosscheck_block,
    fk_points_block,
    lemma6_block,
    parallel_map,
    realization_seed,
    sup_block,
    theorem11_block,
    variational_block,
    viscous_moment_block,
)
from .forcing import ForcingPath, TimeGrid, load_forcing, sample_forcing, zeta
from .moments import (
    Z95,
    audit,
    batch_means,
    lemma3_bound,
    lemma4_bound,
    limit_moment,
    moment_recursion,
    theorem11_bound,
    theorem23_moment_bound,
)
from .spectrum import Spectrum, covariance
from .viscous import NonFiniteError, StabilityError, ViscousConfig, field_stats, viscous_solve

__all__ = [
    "EXPERIMENTS",
    "OUTPUT_ENV",
    "EXIT_PASS",
    "EXIT_ACCEPTANCE",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "parse_config",
    "run",
    "sweep",
    "audit_run",
    "replay",
    "snapshot_records",
]

OUTPUT_ENV = "STOCHBURGERS_OUTPUT"
EXIT_PASS, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
MAX_EXCLUDED_FRACTION = 0.01

EXPERIMENTS = (
    "moment_convergence",
    "solver_crosscheck",
    "fk_crosscheck",
    "variational_compare",
    "bound_audit",
    "covariance_check",
)

OPTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "moment_convergence": {"orders": [1, 2, 3, 4], "sweep_order": 2, "drift_tol": 1e-12},
    "solver_crosscheck": {"refine": 2, "l2_tol": 0.05},
    "fk_crosscheck": {"n_points": 8, "n_walkers": 10_000, "z_max": 3.0, "min_fraction": 0.875},
    "variational_compare": {
        "n_x": 16,
        "restarts": 4,
        "var_coarsen": 1,
        "heat": "lattice",
        "agree_tol": 0.05,
        "grad_cut": 5.0,
        "min_fraction": 0.8,
        "el_tol": 1e-3,
    },
    "bound_audit": {
        "n_sup": 10_000,
        "sup_dt": 1e-4,
        "sup_times": [0.5, 1.0, 2.0],
        "sup_orders": [1, 2, 4],
        "n_lemma6": 100,
        "lemma6_epsilon": 0.25,
        "n_theorem11": 1000,
        "theorem11_epsilon": 0.1,
        "theorem11_orders": [1, 2],
        "n_theorem23": 200,
        "theorem23_K": 1000,
        "theorem23_n_x": 16,
        "restarts": 4,
        "identity_max_order": 16,
        "identity_times": [0.5, 1.0, 2.0],
        "identity_rtol": 1e-12,
    },
    "covariance_check": {
        "pairs": [[0.5, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 1.0], [0.25, 0.75, 1.0, 2.5]],
        "z_max": 4.0,
    },
}

_COMMON_KEYS = {
    "experiment",
    "spectrum",
    "T",
    "K",
    "M",
    "epsilon",
    "n_realizations",
    "master_seed",
    "workers",
    "output",
    "block_size",
    "cfl_safety",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; raised before any computation."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    spectrum: Spectrum
    T: float
    K: int
    M: int
    epsilons: tuple[float, ...]
    n_realizations: int
    master_seed: int
    workers: int = 1
    output: str = "results"
    block_size: int = 50
    cfl_safety: float = 1.0
    options: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Semantic content of the config; ``workers`` and ``output`` are excluded."""
        return {
            "experiment": self.experiment,
            "spectrum": [float(a) for a in self.spectrum.coeffs],
            "T": float(self.T),
            "K": int(self.K),
            "M": int(self.M),
            "epsilon": [float(e) for e in self.epsilons],
            "n_realizations": int(self.n_realizations),
            "master_seed": int(self.master_seed),
            "block_size": int(self.block_size),
            "cfl_safety": float(self.cfl_safety),
            "options": _canonical_value(self.options),
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.K)

    def replace(self, **changes) -> "ExperimentConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return ExperimentConfig(**data)


def _canonical_value(v):
    if isinstance(v, dict):
        return {str(k): _canonical_value(v[k]) for k in sorted(v)}
    if isinstance(v, (list, tuple)):
        return [_canonical_value(x) for x in v]
    if isinstance(v, bool) or isinstance(v, str):
        return v
    if isinstance(v, int):
        return int(v)
    return float(v)


def _num(table: dict, key: str, kind: type, default=None, *, positive: bool = True):
    if key not in table:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{key} must be an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{key} must be finite, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{key} must be positive, got {v!r}")
    return v


def _check_option(name: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool) and value > 0
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, list) and len(value) > 0
    if not ok:
        raise ConfigError(f"option {name} = {value!r} does not match the expected form of {default!r}")
    return value


def parse_config(table: dict) -> ExperimentConfig:
    """Validate a parsed TOML table and build the config; raises :class:`ConfigError`."""
    table = copy.deepcopy(dict(table))
    exp = table.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    unknown = set(table) - _COMMON_KEYS - set(EXPERIMENTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "spectrum" not in table or not isinstance(table["spectrum"], dict):
        raise ConfigError("missing [spectrum] table")
    try:
        spec = Spectrum.from_config(table["spectrum"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad spectrum: {exc}") from exc

    T = _num(table, "T", float)
    K = _num(table, "K", int)
    M = _num(table, "M", int)
    if M <= 2 * spec.n_max:
        raise ConfigError(f"M={M} must exceed 2*n_max={2 * spec.n_max}")
    if "epsilon" not in table:
        raise ConfigError("missing required key 'epsilon'")
    eps = table["epsilon"]
    eps_list = eps if isinstance(eps, list) else [eps]
    if not eps_list:
        raise ConfigError("epsilon list must be nonempty")
    epsilons = tuple(_num({"epsilon": e}, "epsilon", float) for e in eps_list)
    n_real = _num(table, "n_realizations", int, positive=False)
    if n_real < 1:
        raise ConfigError(f"n_realizations must be positive, got {n_real}")
    seed = _num(table, "master_seed", int, positive=False)
    if seed < 0:
        raise ConfigError(f"master_seed must be nonnegative, got {seed}")
    workers = _num(table, "workers", int, 1)
    block = _num(table, "block_size", int, 50)
    cfl = _num(table, "cfl_safety", float, 1.0)
    if cfl > 1:
        raise ConfigError(f"cfl_safety must lie in (0, 1], got {cfl}")
    output = table.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError("output must be a nonempty path string")

    section = table.get(exp, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{exp}] must be a table")
    defaults = OPTION_DEFAULTS[exp]
    extra = set(section) - set(defaults)
    if extra:
        raise ConfigError(f"unknown options in [{exp}]: {sorted(extra)}")
    options = {k: _check_option(k, section.get(k, v), v) for k, v in defaults.items()}
    cfg = ExperimentConfig(exp, spec, T, K, M, epsilons, n_real, seed, workers, output, block, cfl, options)
    _validate_experiment(cfg)
    return cfg


def _validate_experiment(cfg: ExperimentConfig) -> None:
    o = cfg.options
    if cfg.experiment == "moment_convergence":
        for p in o["orders"]:
            if not (isinstance(p, int) and 1 <= p <= 16):
                raise ConfigError(f"moment orders must be integers in [1, 16], got {p!r}")
        if cfg.n_realizations < 2:
            raise ConfigError("moment estimates need n_realizations >= 2")
    elif cfg.experiment == "variational_compare":
        if o["heat"] not in ("spectral", "lattice"):
            raise ConfigError(f"heat must be 'spectral' or 'lattice', got {o['heat']!r}")
        if cfg.K % o["var_coarsen"]:
            raise ConfigError(f"K={cfg.K} is not divisible by var_coarsen={o['var_coarsen']}")
    elif cfg.experiment == "fk_crosscheck":
        if o["min_fraction"] > 1:
            raise ConfigError("min_fraction must not exceed 1")
    elif cfg.experiment == "bound_audit":
        if cfg.T < 1.0:
            raise ConfigError("bound_audit needs T >= 1 for the inviscid sup bound")
        for t in o["sup_times"]:
            if not (isinstance(t, (int, float)) and t > 0):
                raise ConfigError(f"sup_times must be positive, got {t!r}")
        for p in o["sup_orders"] + o["theorem11_orders"]:
            if not (isinstance(p, (int, float)) and p >= 1):
                raise ConfigError(f"bound orders must be >= 1, got {p!r}")
    elif cfg.experiment == "covariance_check":
        for pair in o["pairs"]:
            if not (isinstance(pair, list) and len(pair) == 4):
                raise ConfigError(f"covariance pairs are [s, t, x, y], got {pair!r}")
            for t in pair[:2]:
                try:
                    cfg.grid.index_of(float(t))
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, *, workers: int | None = None, seed: int | None = None) -> ExperimentConfig:
    """Read and validate a config file, applying command-line overrides."""
    try:
        with open(path, "rb") as fh:
            table = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if workers is not None:
        table["workers"] = workers
    if seed is not None:
        table["master_seed"] = seed
    return parse_config(table)


# ---------------------------------------------------------------------------
# outcomes and files


@dataclass
class Outcome:
    records: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    n_attempted: int = 0
    n_excluded: int = 0

    def extend(self, other: "Outcome") -> None:
        self.records += other.records
        self.rows += other.rows
        self.checks.update(other.checks)
        self.n_attempted += other.n_attempted
        self.n_excluded += other.n_excluded

    @property
    def numerical_failure(self) -> bool:
        return self.n_attempted > 0 and self.n_excluded > MAX_EXCLUDED_FRACTION * self.n_attempted

    @property
    def exit_code(self) -> int:
        if self.numerical_failure:
            return EXIT_NUMERICAL
        return EXIT_PASS if all(self.checks.values()) else EXIT_ACCEPTANCE


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    wall_time_s: float
    experiment: str
    command: str
    exit_code: int
    checks: dict
    n_attempted: int
    n_excluded: int
    summary: dict
    output_dir: str

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_PASS

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "output_dir"}
        d["passed"] = self.passed
        return d


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_json_default, allow_nan=True)


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output)


def _write_outputs(out: Path, outcome: Outcome, manifest: RunManifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for rec in outcome.records:
            fh.write(dumps(rec) + "\n")
    keys: list[str] = []
    for row in outcome.rows:
        keys += [k for k in row if k not in keys]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in outcome.rows:
            w.writerow(row)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _finish(cfg: ExperimentConfig, outcome: Outcome, command: str, t0: float) -> RunManifest:
    out = output_dir(cfg)
    manifest = RunManifest(
        config_hash=cfg.config_hash(),
        artifact_version=__version__,
        wall_time_s=time.perf_counter() - t0,
        experiment=cfg.experiment,
        command=command,
        exit_code=outcome.exit_code,
        checks=dict(outcome.checks),
        n_attempted=outcome.n_attempted,
        n_excluded=outcome.n_excluded,
        summary=outcome.summary,
        output_dir=str(out),
    )
    _write_outputs(out, outcome, manifest)
    return manifest


def _base_task(cfg: ExperimentConfig, **extra) -> dict:
    task = {
        "a": list(cfg.spectrum.coeffs),
        "T": cfg.T,
        "K": cfg.K,
        "M": cfg.M,
        "master_seed": cfg.master_seed,
        "cfl_safety": cfg.cfl_safety,
    }
    task.update(extra)
    return task


def _ensemble(fn: Callable, cfg: ExperimentConfig, n: int, task: dict) -> list[dict]:
    tasks = [dict(task, indices=list(r)) for r in block_ranges(n, cfg.block_size)]
    return [rec for block in parallel_map(fn, tasks, cfg.workers) for rec in block]


def _excluded(records: list[dict]) -> int:
    return sum(1 for r in records if r.get("status") == "failed")


# ---------------------------------------------------------------------------
# experiments


def _moment_convergence(cfg: ExperimentConfig, eps: float) -> Outcome:
    o = cfg.options
    recs = _ensemble(viscous_moment_block, cfg, cfg.n_realizations, _base_task(cfg, epsilon=eps, orders=o["orders"]))
    ok = [r for r in recs if r["status"] == "ok"]
    out = Outcome(records=[dict(r, kind="realization") for r in recs], n_attempted=len(recs))
    out.n_excluded = len(recs) - len(ok)
    drift = max((r["mean_drift"] for r in ok), default=0.0)
    errors = sorted({r["error"] for r in recs if r["status"] == "failed"})
    summ = {"epsilon": eps, "n_ok": len(ok), "n_excluded": out.n_excluded, "max_mean_drift": drift, "errors": errors}
    reports = {}
    if len(ok) >= 2:
        for p in o["orders"]:
            est, hw = batch_means([r["moments"][str(p)] for r in ok])
            target = limit_moment(p, cfg.T, cfg.spectrum)
            row = {
                "kind": "moment",
                "epsilon": eps,
                "order": p,
                "t": cfg.T,
                "estimate": est,
                "ci_halfwidth": hw,
                "target": target,
                "n_samples": len(ok),
            }
            out.records.append(row)
            out.rows.append({k: v for k, v in row.items() if k != "kind"})
            reports[str(p)] = row
    summ["moments"] = {p: {"estimate": r["estimate"], "ci_halfwidth": r["ci_halfwidth"], "target": r["target"]} for p, r in reports.items()}
    out.summary = summ
    out.checks[f"conservation[eps={eps:g}]"] = drift <= o["drift_tol"]
    return out


def _solver_crosscheck(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    out = Outcome()
    for eps in cfg.epsilons:
        recs = _ensemble(crosscheck_block, cfg, cfg.n_realizations, _base_task(cfg, epsilon=eps, refine=o["refine"]))
        ok = [r for r in recs if r["status"] == "ok"]
        out.records += [dict(r, kind="crosscheck") for r in recs]
        out.n_attempted += len(recs)
        out.n_excluded += len(recs) - len(ok)
        worst = max((r["rel_l2"] for r in ok), default=float("nan"))
        out.rows.append(
            {
                "epsilon": eps,
                "M": cfg.M,
                "K": cfg.K,
                "max_rel_l2": worst,
                "max_rel_l2_refined": max((r["rel_l2_refined"] for r in ok), default=float("nan")),
                "all_decreased": all(r["decreased"] for r in ok),
            }
        )
        out.checks[f"rel_l2<={o['l2_tol']:g}[eps={eps:g}]"] = bool(ok) and worst <= o["l2_tol"]
        out.checks[f"refinement_decreases[eps={eps:g}]"] = bool(ok) and all(r["decreased"] for r in ok)
    out.summary = {"rows": out.rows}
    return out


def _fk_crosscheck(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    out = Outcome()
    for eps in cfg.epsilons:
        task = _base_task(cfg, epsilon=eps, n_points=o["n_points"], n_walkers=o["n_walkers"])
        recs = _ensemble(fk_points_block, cfg, cfg.n_realizations, task)
        agree = sum(1 for r in recs if abs(r["z"]) <= o["z_max"])
        out.records += [dict(r, kind="feynman_kac") for r in recs]
        out.n_attempted += cfg.n_realizations
        frac = agree / len(recs)
        out.rows.append({"epsilon": eps, "n_points": len(recs), "n_agree": agree, "fraction": frac})
        out.checks[f"fk_agreement[eps={eps:g}]"] = frac >= o["min_fraction"]
    out.summary = {"rows": out.rows}
    return out


def _variational_compare(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    task = _base_task(
        cfg,
        epsilons=list(cfg.epsilons),
        n_x=o["n_x"],
        restarts=o["restarts"],
        var_coarsen=o["var_coarsen"],
        heat=o["heat"],
    )
    recs = _ensemble(variational_block, cfg, cfg.n_realizations, task)
    pts = [r for r in recs if r.get("kind") != "sup"]
    out = Outcome(records=[dict(r, kind=r.get("kind", "variational")) for r in recs], n_attempted=cfg.n_realizations)
    out.n_excluded = len({r["index"] for r in pts if not r["converged"]})
    for eps in cfg.epsilons:
        key = str(eps)
        diffs = [abs(r["u"] - r["colehopf"][key]["u"]) for r in pts]
        smooth = [abs(r["u"] - r["colehopf"][key]["u"]) for r in pts if abs(r["colehopf"][key]["u_x"]) < o["grad_cut"]]
        agree = sum(1 for d in smooth if d <= o["agree_tol"])
        out.rows.append(
            {
                "epsilon": eps,
                "mean_abs_diff": math.fsum(diffs) / len(diffs),
                "n_smooth_points": len(smooth),
                "n_agree": agree,
                "fraction": agree / len(smooth) if smooth else float("nan"),
            }
        )
    smallest = min(cfg.epsilons)
    row = next(r for r in out.rows if r["epsilon"] == smallest)
    out.checks[f"agreement[eps={smallest:g}]"] = row["n_smooth_points"] > 0 and row["fraction"] >= o["min_fraction"]
    el = max(r["el_residual"] for r in pts)
    out.checks[f"el_residual<={o['el_tol']:g}"] = el <= o["el_tol"]
    out.summary = {"rows": out.rows, "max_el_residual": el}
    return out


def _identity_check(cfg: ExperimentConfig) -> Outcome:
    o = OPTION_DEFAULTS["bound_audit"] | (cfg.options if cfg.experiment == "bound_audit" else {})
    out = Outcome()
    worst = 0.0
    for t in o["identity_times"]:
        rec = moment_recursion(o["identity_max_order"], float(t), cfg.spectrum)
        for p in range(2, o["identity_max_order"] + 1):
            lim = limit_moment(p, float(t), cfg.spectrum)
            err = abs(rec[p] - lim) / abs(lim) if lim else abs(rec[p])
            worst = max(worst, err)
            out.records.append({"kind": "identity", "order": p, "t": float(t), "recursion": rec[p], "limit": lim, "rel_error": err})
    out.checks["moment_identity"] = worst <= o["identity_rtol"]
    out.summary = {"identity_max_rel_error": worst}
    return out


def _phase_seed(master_seed: int, phase: int) -> int:
    # indices at 2**40 and above never collide with realization indices
    return realization_seed(master_seed, 2**40 + phase)


def _bound_audit(cfg: ExperimentConfig) -> Outcome:
    o = OPTION_DEFAULTS["bound_audit"] | (cfg.options if cfg.experiment == "bound_audit" else {})
    spec = cfg.spectrum
    out = _identity_check(cfg)
    audits = []

    # suprema of the driving Brownian motions
    t_max = max(float(t) for t in o["sup_times"])
    k_sup = int(round(t_max / o["sup_dt"]))
    task = {"n_modes": spec.n_max, "T": t_max, "K": k_sup, "times": [float(t) for t in o["sup_times"]], "master_seed": _phase_seed(cfg.master_seed, 0)}
    sups = _ensemble(sup_block, cfg, o["n_sup"], task)
    weights = np.concatenate([spec.a, spec.a])
    sum_abs = math.fsum(np.abs(weights))
    for ti, t in enumerate(task["times"]):
        lin = np.array([math.fsum(weights * np.asarray(r["sups"][ti])) for r in sups])
        audits.append(audit("lemma3", lemma3_bound(weights, t), math.fsum(np.exp(lin)) / lin.size, t=t, n=lin.size))
        for p in o["sup_orders"]:
            emp = math.fsum(np.abs(lin) ** p) / lin.size
            audits.append(audit("lemma4", lemma4_bound(p, t, sum_abs), emp, t=t, p=p, n=lin.size))

    # positivity floor of the Cole-Hopf field
    task = _base_task(cfg, epsilon=o["lemma6_epsilon"], master_seed=_phase_seed(cfg.master_seed, 1))
    l6 = _ensemble(lemma6_block, cfg, o["n_lemma6"], task)
    out.records += [dict(r, kind="lemma6") for r in l6]
    n_ok = sum(1 for r in l6 if r["min_U"] >= r["bound"])
    out.checks["lemma6_pathwise"] = n_ok == len(l6)
    ratio = min(r["min_U"] / r["bound"] if r["bound"] > 0 else math.inf for r in l6)
    audits.append(audit("lemma6", 1.0, 1.0 / ratio if ratio > 0 else math.inf, n=len(l6), n_satisfied=n_ok, note="ratio bound/min_U"))

    # space-time supremum of the viscous solution
    task = _base_task(cfg, epsilon=o["theorem11_epsilon"], master_seed=_phase_seed(cfg.master_seed, 2))
    t11 = _ensemble(theorem11_block, cfg, o["n_theorem11"], task)
    out.records += [dict(r, kind="theorem11") for r in t11]
    ok11 = [r["sup_abs"] for r in t11 if r["status"] == "ok"]
    out.n_attempted += len(t11)
    out.n_excluded += len(t11) - len(ok11)
    for p in o["theorem11_orders"]:
        emp = math.fsum(s**p for s in ok11) / max(len(ok11), 1)
        audits.append(audit("theorem11", theorem11_bound(p, cfg.T, spec), emp, p=p, t=cfg.T, epsilon=o["theorem11_epsilon"], n=len(ok11)))

    # inviscid supremum at t = 1
    k23 = o["theorem23_K"]
    task = _base_task(
        cfg,
        T=1.0,
        K=k23,
        epsilons=[],
        n_x=o["theorem23_n_x"],
        restarts=o["restarts"],
        master_seed=_phase_seed(cfg.master_seed, 3),
    )
    v23 = _ensemble(variational_block, cfg, o["n_theorem23"], task)
    sup_recs = [r for r in v23 if r.get("kind") == "sup"]
    out.records += [dict(r, kind="theorem23") for r in sup_recs]
    emp = math.fsum(r["sup_abs_u"] for r in sup_recs) / len(sup_recs)
    audits.append(audit("theorem23", theorem23_moment_bound(1, spec), emp, p=1, t=1.0, n=len(sup_recs)))
    out.checks["theorem23_pathwise"] = all(r["sup_abs_u"] <= r["pathwise_bound"] for r in sup_recs)

    for a in audits:
        out.records.append(dict(a.to_dict(), kind="audit"))
        out.rows.append({"bound": a.bound_name, "bound_value": a.bound_value, "empirical": a.empirical_value, "satisfied": a.satisfied, **a.params})
    out.checks["bound_audits"] = all(a.satisfied for a in audits)
    out.summary["n_audits"] = len(audits)
    out.summary["n_violations"] = sum(1 for a in audits if not a.satisfied)
    return out


def _covariance_check(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    grid = cfg.grid
    prods: dict[int, list[float]] = {i: [] for i in range(len(o["pairs"]))}
    for r in range(cfg.n_realizations):
        path = sample_forcing(cfg.spectrum, grid, realization_seed(cfg.master_seed, r))
        for i, (s, t, x, y) in enumerate(o["pairs"]):
            zs = zeta(path, cfg.spectrum, grid.index_of(float(s)), float(x))
            zt = zeta(path, cfg.spectrum, grid.index_of(float(t)), float(y))
            prods[i].append(float(zs) * float(zt))
    out = Outcome(n_attempted=cfg.n_realizations)
    for i, (s, t, x, y) in enumerate(o["pairs"]):
        est, hw = batch_means(prods[i])
        exact = covariance(cfg.spectrum, float(s), float(t), float(x), float(y))
        se = hw / Z95
        row = {"s": s, "t": t, "x": x, "y": y, "estimate": est, "ci_halfwidth": hw, "exact": exact, "z": (est - exact) / se if se else 0.0}
        out.records.append(dict(row, kind="covariance"))
        out.rows.append(row)
        out.checks[f"covariance[{i}]"] = abs(est - exact) <= o["z_max"] * se
    out.summary = {"rows": out.rows}
    return out


_RUNNERS: dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "solver_crosscheck": _solver_crosscheck,
    "fk_crosscheck": _fk_crosscheck,
    "variational_compare": _variational_compare,
    "bound_audit": _bound_audit,
    "covariance_check": _covariance_check,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Execute ``cfg.experiment`` and write results, summary and manifest."""
    t0 = time.perf_counter()
    if cfg.experiment == "moment_convergence":
        if len(cfg.epsilons) != 1:
            raise ConfigError("moment_convergence runs one epsilon; use sweep for a list")
        outcome = _moment_convergence(cfg, cfg.epsilons[0])
    else:
        outcome = _RUNNERS[cfg.experiment](cfg)
    return _finish(cfg, outcome, "run", t0)


def sweep(cfg: ExperimentConfig) -> RunManifest:
    """Moment convergence for each epsilon with a monotone-approach check.

    The distance ``|estimate - target|`` at order ``sweep_order`` may grow
    between consecutive (decreasing) epsilons by at most twice the larger of
    the two confidence half-widths.
    """
    if cfg.experiment != "moment_convergence":
        raise ConfigError(f"sweep needs experiment = 'moment_convergence', got {cfg.experiment!r}")
    if len(cfg.epsilons) == 1:
        return run(cfg)
    t0 = time.perf_counter()
    order = str(cfg.options["sweep_order"])
    total = Outcome()
    per_eps = []
    for eps in sorted(cfg.epsilons, reverse=True):
        o = _moment_convergence(cfg, eps)
        total.extend(o)
        per_eps.append(o.summary)
    table = []
    for s in per_eps:
        m = s["moments"].get(order)
        if m is not None:
            table.append({"epsilon": s["epsilon"], "distance": abs(m["estimate"] - m["target"]), **m})
    monotone = len(table) == len(per_eps)
    for prev, cur in zip(table, table[1:]):
        slack = 2.0 * max(prev["ci_halfwidth"], cur["ci_halfwidth"])
        if cur["distance"] > prev["distance"] + slack:
            monotone = False
    total.checks[f"monotone_approach[order={order}]"] = monotone
    total.summary = {"per_epsilon": per_eps, "sweep_table": table}
    return _finish(cfg, total, "sweep", t0)


def audit_run(cfg: ExperimentConfig) -> RunManifest:
    """Bound audits plus the moment identity, whatever experiment the config names."""
    t0 = time.perf_counter()
    if cfg.T < 1.0:
        raise ConfigError("audit needs T >= 1 for the inviscid sup bound")
    return _finish(cfg, _bound_audit(cfg), "audit", t0)


def snapshot_records(solver: str, times, snapshots, include_values: bool = False) -> list[dict]:
    """``{solver, t, stats[, values]}`` records for saved fields."""
    out = []
    for t, u in zip(times, snapshots):
        rec = {"kind": "snapshot", "solver": solver, "t": float(t), "stats": field_stats(u)}
        if include_values:
            rec["values"] = np.asarray(u, dtype=float).tolist()
        out.append(rec)
    return out


def replay(
    dump: str | Path,
    cfg: ExperimentConfig,
    *,
    save_every: int | None = None,
    include_values: bool = False,
) -> RunManifest:
    """Re-run both solvers on a stored forcing path and compare them."""
    t0 = time.perf_counter()
    try:
        path: ForcingPath = load_forcing(dump)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load forcing dump {dump}: {exc}") from exc
    if path.n_modes < cfg.spectrum.n_max:
        raise ConfigError(f"dump has {path.n_modes} modes but the spectrum needs {cfg.spectrum.n_max}")
    every = save_every or max(1, path.grid.K // 10)
    out = Outcome(n_attempted=1)
    eps = cfg.epsilons[0]
    vcfg = ViscousConfig(eps, cfg.M, path.grid, cfg.cfl_safety)
    v = viscous_solve(vcfg, path, cfg.spectrum, save_every=every)
    ch = colehopf_solve(vcfg, path, cfg.spectrum, save_every=every)
    u_ch = [recover_u(U, eps) for U in ch.snapshots]
    out.records += snapshot_records("viscous", v.times, v.snapshots, include_values)
    out.records += snapshot_records("colehopf", ch.times, u_ch, include_values)
    rel = float(np.linalg.norm(v.final - u_ch[-1]) / np.linalg.norm(v.final))
    row = {"seed": path.seed, "epsilon": eps, "M": cfg.M, "K": path.grid.K, "rel_l2": rel}
    out.records.append(dict(row, kind="crosscheck"))
    out.rows.append(row)
    out.summary = row
    return _finish(cfg, out, "replay", t0)


NUMERICAL_ERRORS = (StabilityError, NonFiniteError, ColeHopfError, FloatingPointError)
