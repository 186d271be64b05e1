"""
Command line front end.

    netlasso run <config.toml|preset> [--scale desk|paper] [--out DIR] [--seed N]
                 [--workers N] [--trials N]
    netlasso rounds <topology> <m> <rule> --target X [--p P] [--seed N]
    netlasso probe-rsc <config.toml|preset> [--n-dirs N] [--scale desk|paper]

Exit codes: 0 success, 2 invalid input, 3 divergence. NETLASSO_OUT_DIR and
NETLASSO_WORKERS override the output directory and worker count.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from ..errors import (
    ConstructionFailure,
    DivergenceFailure,
    ExperimentFailure,
    InvalidArgument,
    SearchFailure,
)
from ..model import generate_model, rsc_rsm_probe
from ..network import build_topology, chebyshev_rounds_for_target, mixing_matrix, rounds_for_target
from .config import load_config
from .experiment import run_experiment
from .presets import PRESETS, preset

log = logging.getLogger("netlasso")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _load(source, scale):
    if source in PRESETS:
        return preset(source, scale)
    if not os.path.exists(source):
        raise InvalidArgument(f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    return load_config(source)


def _cmd_run(args):
    cfg = _load(args.config, args.scale)
    cfg = cfg.with_overrides(base_seed=args.seed, workers=args.workers, trials=args.trials)
    out = args.out or os.environ.get("NETLASSO_OUT_DIR") or os.path.join(cfg.out_dir, cfg.name)
    res = run_experiment(cfg, out_dir=out)
    print(f"wrote {res.out_dir}")
    return EXIT_OK


def _cmd_rounds(args):
    params = {"p": args.p} if args.topology == "erdos_renyi" else {}
    g = build_topology(args.topology, args.m, params, seed=args.seed)
    W = mixing_matrix(g, args.rule)
    target = args.target if args.target is not None else float(args.m) ** -8
    print(json.dumps({
        "topology": args.topology,
        "m": args.m,
        "rule": args.rule,
        "rho": W.rho,
        "target": target,
        "rounds": rounds_for_target(W.rho, target),
        "chebyshev_rounds": chebyshev_rounds_for_target(W.rho, target),
    }, indent=2))
    return EXIT_OK


def _cmd_probe(args):
    cfg = _load(args.config, args.scale)
    if not cfg.cases:
        raise InvalidArgument("probe-rsc needs a config with at least one case")
    mc = replace(cfg.cases[0].model, seed=cfg.base_seed if args.seed is None else args.seed)
    rep = rsc_rsm_probe(generate_model(mc), args.n_dirs)
    print(json.dumps({
        "n_dirs": rep.n_dirs,
        "satisfaction_fraction": rep.satisfaction_fraction,
        "fraction_by_inequality": rep.fraction_by_inequality,
        "c1_fit": rep.c1_fit,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="netlasso", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a TOML file or preset name")
    p.add_argument("config")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int,
                   default=int(os.environ["NETLASSO_WORKERS"]) if os.environ.get("NETLASSO_WORKERS") else None)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("rounds", help="consensus rounds needed for rho^k <= target")
    p.add_argument("topology")
    p.add_argument("m", type=int)
    p.add_argument("rule")
    p.add_argument("--target", type=float, help="default m^-8")
    p.add_argument("--p", type=float, default=0.87, help="ER link probability")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_rounds)

    p = sub.add_parser("probe-rsc", help="sample restricted curvature inequalities")
    p.add_argument("config")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--n-dirs", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_probe)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DivergenceFailure, ExperimentFailure, SearchFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgument, ConstructionFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
