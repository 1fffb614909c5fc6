"""Command-line entry point ``odefit``.

Exit codes: 0 success, 1 a bundle or Jacobian check failed, 2 config error,
3 data error, 4 every initial guess failed, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .exceptions import AllGuessesFailedError, ConfigError, SeriesError
from .experiments import (
    METHODS,
    PRESET_EXPERIMENTS,
    load_config,
    preset_config,
    run_fit,
    run_generate,
    run_report,
    run_repro,
)
from .model import PRESET_MODELS, check_param_jacobian, get_model

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4, 5

log = logging.getLogger("odefit")


def _seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("ODEFIT_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ODEFIT_SEED must be an integer, got {env!r}") from None
    return None


def _overrides(args) -> dict:
    """Translate command-line flags into a nested config override."""
    solver = {}
    for flag, key in (("epsilon", "epsilon"), ("max_iters", "max_iters"), ("subset_r", "subset_r"), ("damping", "damping")):
        val = getattr(args, flag, None)
        if val is not None:
            solver[key] = val
    out: dict = {}
    if solver:
        method = getattr(args, "method", None)
        if method and "damping" in solver:
            # a flag beats the per-method override in the config
            solver["overrides"] = {method: {"damping": solver["damping"]}}
        out["solver"] = solver
    if getattr(args, "derivative", None):
        out["derivative"] = args.derivative
    if getattr(args, "nls_iters", None) is not None:
        out["nls"] = {"max_iters": args.nls_iters}
    return out


def _config(args):
    seed = _seed(args)
    over = _overrides(args)
    if args.config:
        return load_config(args.config, args.output, seed, over)
    if args.preset:
        return preset_config(args.preset, args.output, seed, over)
    raise ConfigError("give a config file (-c) or a preset (--preset)")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("-c", "--config", type=Path, help="JSON experiment config")
    src.add_argument("--preset", help=f"built-in experiment ({', '.join(PRESET_EXPERIMENTS)})")
    p.add_argument("-o", "--output", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed (overrides ODEFIT_SEED and the config)")


def cmd_generate(args) -> int:
    cfg = _config(args)
    for name, path in run_generate(cfg).items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    paths, results = run_fit(cfg, args.method, args.data)
    for k, (path, res) in enumerate(zip(paths, results), 1):
        status = "failed" if res is None else f"{res.termination.value} after {res.iterations} iterations"
        print(f"guess {k}: {status} -> {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    fits = args.fits or sorted(cfg.output_dir.glob("fit_*.json"))
    if not fits:
        raise ConfigError(f"no fit files given and none found in {cfg.output_dir}")
    for path in run_report(cfg, fits, args.data, args.clean):
        print(path)
    return EXIT_OK


def cmd_repro(args) -> int:
    cfg = preset_config(args.experiment, args.output, _seed(args))
    out = run_repro(cfg)
    print(f"bundle written to {cfg.output_dir}")
    ok = True
    for name, passed in out["checks"].items():
        print(f"{'PASS' if passed else 'FAIL'} {name}")
        ok &= passed
    return EXIT_OK if ok else EXIT_CHECKS


def cmd_check_jacobian(args) -> int:
    names = args.models or list(PRESET_MODELS)
    ok = True
    for name in names:
        err = check_param_jacobian(get_model(name), trials=args.trials, seed=args.seed or 0)
        passed = err <= args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max discrepancy {err:.3e} (tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_CHECKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odefit", description="ODE parameter estimation by gradient matching")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate data.csv, clean.csv and meta.json")
    _add_config_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit every initial guess with one method")
    _add_config_args(p)
    p.add_argument("-m", "--method", required=True, choices=(*METHODS, "nls"))
    p.add_argument("--data", type=Path, help="data file (default: <output>/data.csv)")
    p.add_argument("--subset-r", dest="subset_r", type=int, help="subset size for snr/sgd")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--derivative", choices=("forward", "three-point"))
    p.add_argument("--nls-iters", dest="nls_iters", type=int, help="iteration budget for nls")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="metrics tables for fit result files")
    _add_config_args(p)
    p.add_argument("fits", nargs="*", type=Path, help="fit_*.json files (default: all in the output directory)")
    p.add_argument("--data", type=Path)
    p.add_argument("--clean", type=Path, help="noise-free data for the derivative rows")
    p.add_argument("--derivative", choices=("forward", "three-point"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("repro", help="run a whole built-in experiment")
    p.add_argument("experiment", help=f"one of {', '.join(PRESET_EXPERIMENTS)} (or 'activator')")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("check-jacobian", help="compare analytic parameter Jacobians with finite differences")
    p.add_argument("models", nargs="*", help=f"models to check (default: {', '.join(PRESET_MODELS)})")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_jacobian)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        # get_model reports unknown names as KeyError
        print(f"config error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SeriesError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AllGuessesFailedError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
