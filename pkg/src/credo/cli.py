"""Command-line front end: ``credo {synth,real,check-stats,rates,covariance}``.

Exit status: 0 on success, 1 on a runtime or statistical failure, 2 on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .harness import EnsembleError
from .sensing import ObservabilityError
from . import experiments

SEED_ENV = "CREDO_SEED"

DEFAULT_CONFIGS = {
    "synth": "synthetic.cfg",
    "rates": "synthetic.cfg",
    "check-stats": "synthetic.cfg",
    "covariance": "covariance_scalar.cfg",
}

log = logging.getLogger("credo")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="credo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="config file, or the name of a bundled config")
    common.add_argument("-o", "--out", type=Path, help="output directory (default: timestamped)")
    common.add_argument("-s", "--seed", type=int, help=f"master seed (overrides ${SEED_ENV} and the config)")
    common.add_argument("-w", "--workers", type=_positive_int, default=None,
                        help="worker processes (default: CPU count)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--runs", type=_positive_int, help="Monte Carlo runs (overrides config)")
    runs.add_argument("--horizon", type=_positive_int, help="iterations per run (overrides config)")

    sub.add_parser("synth", parents=[common, runs], help="synthetic-data ensembles")
    real = sub.add_parser("real", parents=[common, runs], help="real-data experiment")
    real.add_argument("--data", help="dataset CSV (overrides [data] path)")
    sub.add_parser("check-stats", parents=[common], help="gated-Laplacian moment identities")
    sub.add_parser("rates", parents=[common, runs], help="MSE rate checks")
    sub.add_parser("covariance", parents=[common, runs], help="limit covariance check")
    return p


def resolve_seed(cli_seed, config_seed: int) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return config_seed


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg_name = args.config or DEFAULT_CONFIGS.get(args.verb)
        if cfg_name is None:
            raise ConfigError(f"'{args.verb}' needs --config")
        cfg = load_config(cfg_name)
        seed = resolve_seed(args.seed, cfg.section("experiment")["master_seed"])
        out = args.out or Path("credo-out") / f"{args.verb}-{time.strftime('%Y%m%d-%H%M%S')}"
        workers = args.workers or os.cpu_count() or 1
        t0 = time.perf_counter()
        if args.verb == "synth":
            res = experiments.run_synth(cfg, seed, out, args.runs, args.horizon, workers)
        elif args.verb == "rates":
            res = experiments.run_rates(cfg, seed, out, args.runs, args.horizon, workers)
        elif args.verb == "check-stats":
            res = experiments.run_check_stats(cfg, seed, out, workers)
        elif args.verb == "covariance":
            res = experiments.run_covariance(cfg, seed, out, args.runs, args.horizon, workers)
        else:
            res = experiments.run_real(cfg, seed, out, args.data, args.runs, args.horizon, workers)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"credo: error: {exc}", file=sys.stderr)
        return 2
    except ObservabilityError as exc:
        print(f"credo: {exc} (set another [data] partition_seed)", file=sys.stderr)
        return 1
    except (EnsembleError, RuntimeError, ValueError) as exc:
        print(f"credo: failed: {exc}", file=sys.stderr)
        return 1
    for line in res.lines:
        print(line)
    for path in res.artifacts:
        log.info("wrote %s", path)
    print(f"seed {seed}; artifacts in {out} ({time.perf_counter() - t0:.1f}s)")
    return 0 if res.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
