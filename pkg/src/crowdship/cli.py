"""Command line entry point: train, evaluate, simulate, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import POLICIES, ConfigError, ExperimentConfig, load_config

EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_DIVERGED = 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args) -> int:
    from .training import run_training
    cfg = _config(args)

    def progress(ep, stats):
        logging.getLogger("crowdship").info("episode %d cost %.2f delivered %d lost %d", ep, stats.cost,
                                            stats.delivered, stats.lost)
    out = run_training(cfg, args.out, args.episodes, progress)
    print(f"checkpoints written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import run_evaluation
    cfg = _config(args)
    if args.days is not None or args.repeats is not None:
        cfg = cfg.replace(**{k: v for k, v in (("eval.days", args.days), ("eval.repeats", args.repeats))
                             if v is not None})
    res = run_evaluation(cfg, args.checkpoints, args.out, plots=not args.no_plots)
    m, s = res.summary["mean"], res.summary["std"]
    print(f"{res.summary['label']}: mean daily cost {m['cost']:.2f} +/- {s['cost']:.2f} "
          f"over {res.summary['episodes']} episodes; results in {args.out}")
    return 0


def cmd_simulate(args) -> int:
    from .environment import CrowdShippingEnv
    from .simulation import build_policy, build_table, run_episode
    from .training import load_networks
    cfg = _config(args)
    table = build_table(cfg)
    value = pricing = None
    if cfg.policy != "greedy+fixed" and args.checkpoints:
        value, pricing = load_networks(args.checkpoints, cfg, table.num_locations)
    policy = build_policy(cfg, table.num_locations, value, pricing)
    env = CrowdShippingEnv(cfg.env, cfg.fees, table)
    trace = args.trace or f"trace_{cfg.policy.replace('+', '_')}_seed{args.seed}_day{args.day}.csv"
    stats = run_episode(cfg, env, policy, args.seed, args.day, trace_path=trace)
    print(json.dumps(stats.scalars(), indent=2))
    print(f"per-epoch trace written to {trace}")
    return 0


def cmd_sweep(args) -> int:
    from .evaluation import run_sweep
    cfg = _config(args)
    values = [v for v in args.values.split(",") if v]
    policies = args.policies.split(",") if args.policies else POLICIES
    table = run_sweep(cfg, args.axis, values, args.out, args.checkpoints, policies, plots=not args.no_plots)
    for row in table["rows"]:
        costs = "  ".join(f"{k} {v:.2f}" for k, v in row["cost"].items())
        print(f"{table['axis']}={row['value']}: {costs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdship", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML experiment config (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. fees.detour_fee=0.3 (repeatable)")

    sp = sub.add_parser("train", help="train the configured policy pair")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--episodes", type=int, help="override train.episodes")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate trained checkpoints")
    common(sp)
    sp.add_argument("--checkpoints", help="directory written by train (not needed for greedy+fixed)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--policy", choices=POLICIES)
    sp.add_argument("--days", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("simulate", help="run one day and write its per-epoch trace")
    common(sp)
    sp.add_argument("--policy", choices=POLICIES)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--day", type=int, default=0)
    sp.add_argument("--checkpoints")
    sp.add_argument("--trace", help="CSV path for the trace")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="evaluate all policies across values of one parameter")
    common(sp)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", required=True, help="comma separated, e.g. 0.0,0.1,0.2")
    sp.add_argument("--policies", help="comma separated subset of " + ",".join(POLICIES))
    sp.add_argument("--checkpoints", help="directory with <axis>=<value>/<policy> checkpoints")
    sp.add_argument("--out", default="sweep_out")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CROWDSHIP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    from .environment import ContractViolation
    from .simulation import InvariantViolation
    from .training import TrainingDiverged
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, ContractViolation) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
