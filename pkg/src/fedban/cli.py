"""Command-line entry point: ``fedban run | sweep | validate``.

Exit status is 0 on success, 1 when the config fails to parse or validate,
and 2 on any error raised while running.
"""

import argparse
import dataclasses
import json
import os
import sys

from fedban import harness
from fedban.errors import FedbanError, ParseError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser():
    p = argparse.ArgumentParser(prog="fedban", description="Federated private linear bandit experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write per-checkpoint CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=".", help="output directory (default: current)")
    run.add_argument("--seed", type=_u64, help="override env.master_seed")
    run.add_argument("--repeats", type=_positive, help="override the repeat count")

    sweep = sub.add_parser("sweep", help="run one experiment per value of an axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=harness.AXES)
    sweep.add_argument("--out", default=".", help="output directory (default: current)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    return p


def _override(cfg, seed, repeats):
    if seed is not None:
        cfg = dataclasses.replace(cfg, env=dataclasses.replace(cfg.env, master_seed=seed))
    if repeats is not None:
        cfg = dataclasses.replace(cfg, repeats=repeats)
    return cfg.check()


def cmd_run(args):
    cfg = _override(harness.load_config(args.config), args.seed, args.repeats)
    os.makedirs(args.out, exist_ok=True)
    records = harness.run_experiment(cfg)
    csv_path = os.path.join(args.out, "runs.csv")
    harness.write_csv(records, csv_path)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(harness.summary(cfg, records), fh, indent=2)
    print(f"wrote {csv_path} ({len(records)} runs, config {cfg.config_hash[:12]})")


def cmd_sweep(args):
    cfg = harness.load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    everything = []
    for label, sub in harness.sweep_configs(cfg, args.axis):
        records = harness.run_experiment(sub)
        harness.write_csv(records, os.path.join(args.out, f"runs_{args.axis}_{label}.csv"))
        everything += records
        print(f"{args.axis}={label}: final mean per-agent regret "
              f"{harness.aggregate(records)['mean'][-1]:.6g}")
    plot_path = os.path.join(args.out, f"plot_{args.axis}.csv")
    harness.emit_plot_data(everything, args.axis, plot_path)
    print(f"wrote {plot_path}")


def cmd_validate(args):
    cfg = harness.load_config(args.config)
    print(f"ok {cfg.config_hash}")


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ParseError, ValidationError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FedbanError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
