"""Command-line entry point: ``stochburgers {run,sweep,audit,replay,dump} ...``.

Exit codes: 0 pass, 1 acceptance failure, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .ensemble import realization_seed
from .experiments import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    NUMERICAL_ERRORS,
    ConfigError,
    audit_run,
    load_config,
    replay,
    run,
    sweep,
)
from .forcing import dump_forcing, sample_forcing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochburgers", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def with_overrides(sp):
        sp.add_argument("--workers", type=int, help="override the worker count")
        sp.add_argument("--seed", type=int, help="override master_seed")
        return sp

    for name, help_ in (
        ("run", "run the experiment named in the config"),
        ("sweep", "moment convergence over the epsilon list"),
        ("audit", "bound audits and the moment identity"),
    ):
        with_overrides(sub.add_parser(name, help=help_)).add_argument("config")

    rp = with_overrides(sub.add_parser("replay", help="rerun both solvers on a stored forcing path"))
    rp.add_argument("dump")
    rp.add_argument("--config", required=True)
    rp.add_argument("--save-every", type=int, default=None)
    rp.add_argument("--values", action="store_true", help="store full fields in snapshot records")

    dp = sub.add_parser("dump", help="write the forcing path of one realization")
    dp.add_argument("config")
    dp.add_argument("--index", type=int, default=0)
    dp.add_argument("--seed", type=int)
    dp.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        workers = getattr(args, "workers", None)
        if args.command == "dump":
            cfg = load_config(args.config, seed=args.seed)
            seed = realization_seed(cfg.master_seed, args.index)
            dump_forcing(sample_forcing(cfg.spectrum, cfg.grid, seed), args.out)
            print(f"wrote realization {args.index} (seed {seed}) to {args.out}")
            return 0
        cfg = load_config(args.config, workers=workers, seed=args.seed)
        if args.command == "run":
            manifest = run(cfg)
        elif args.command == "sweep":
            manifest = sweep(cfg)
        elif args.command == "audit":
            manifest = audit_run(cfg)
        else:
            manifest = replay(args.dump, cfg, save_every=args.save_every, include_values=args.values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, ok in manifest.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if manifest.n_excluded:
        print(f"excluded {manifest.n_excluded} of {manifest.n_attempted} realizations")
    print(f"results in {manifest.output_dir} (exit {manifest.exit_code})")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
