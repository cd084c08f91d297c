"""Command line entry point: ``rrl run | synth | aggregate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rrlqr.harness import (
    MAX_FAILURE_FRACTION,
    ConfigError,
    aggregate,
    initial_dataset,
    load_config,
    read_results_csv,
    run_experiment,
    trial_streams,
    write_summary_csv,
)
from rrlqr.rrl import PLANNERS

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 2, 3


def _cmd_run(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.method:
        changes["methods"] = tuple(dict.fromkeys(args.method))
    if changes:
        config = config.replace(**changes)
    result = run_experiment(config, args.out, jobs=args.jobs)
    for method, by_metric in sorted(result.summary.items()):
        parts = [f"{metric}={entry['total']['median']:.6g}" for metric, entry in sorted(by_metric.items()) if "total" in entry]
        parts.append(f"information={by_metric['information']['final']['median']:.6g}")
        print(f"{method}: median totals " + " ".join(parts))
    if result.failures:
        print(f"{len(result.failures)} trial(s) failed; see {Path(args.out) / 'failures.json'}", file=sys.stderr)
    return EXIT_FAILURES if result.failure_fraction > MAX_FAILURE_FRACTION else EXIT_OK


def _cmd_synth(args) -> int:
    from rrlqr.estimation import spectral_model
    from rrlqr.synthesis import synthesize_robust

    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    data_rng, _ = trial_streams(config.seed, 0)
    data = initial_dataset(config, data_rng)
    model = spectral_model(data, config.system.sigma_w, config.delta)
    res = synthesize_robust(model, config.cost, config.system.sigma_w)
    out = {
        "K": res.policy.K.tolist(),
        "Sigma": res.policy.Sigma.tolist(),
        "wc_cost": res.wc_cost,
        "lambda": res.lam,
        "Ahat": model.Ahat.tolist(),
        "Bhat": model.Bhat.tolist(),
        "information": float(np.linalg.eigvalsh(model.D).min()),
    }
    print(json.dumps(out, indent=1))
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    rows = read_results_csv(Path(args.input) / "results.csv")
    write_summary_csv(aggregate(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rrl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--method", action="append", choices=PLANNERS)
    run.add_argument("--jobs", type=int, default=None)
    run.set_defaults(func=_cmd_run)

    synth = sub.add_parser("synth", help="one-shot robust synthesis on the configured initial data")
    synth.add_argument("--config", required=True)
    synth.add_argument("--seed", type=int)
    synth.set_defaults(func=_cmd_synth)

    agg = sub.add_parser("aggregate", help="summarize a results directory")
    agg.add_argument("--in", dest="input", required=True)
    agg.add_argument("--out", required=True)
    agg.set_defaults(func=_cmd_aggregate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
