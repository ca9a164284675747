"""Command line entry point: ``maglev <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, plant
from .config import ConfigError, load_config
from .env import read_trace
from .metrics import metrics_from_rows

# printed reference entries of the linearized model for the default magnet
REFERENCE_A = {(1, 0): 2450.0, (1, 2): -1.1558, (2, 1): 2119.7, (2, 2): -3.1438}
REFERENCE_B = {(2, 0): 2.6198}


def _overrides(args) -> dict:
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if getattr(args, "algo", None):
        values["algorithm"] = args.algo
    if args.seed is not None:
        values["seeds"] = str(args.seed)
    if args.out:
        values["out"] = args.out
    for name in ("episodes", "dataset"):
        if getattr(args, name, None) is not None:
            values[name] = str(getattr(args, name))
    return values


def cmd_baseline(args, cfg) -> int:
    for seed in cfg.seeds:
        _, m = harness.run_baseline(cfg, seed, cfg.out)
        print(f"seed {seed}: " + json.dumps(m.as_dict()))
    return 0


def cmd_train(args, cfg) -> int:
    results = harness.train(cfg, cfg.out)
    for r in results:
        print(f"seed {r.seed}: best {r.best_return:.2f} at step {r.best_step}, "
              f"final {r.final_return:.2f}")
    return 0


def cmd_eval(args, cfg) -> int:
    summary, _, _, _ = harness.evaluate(args.checkpoint, cfg, args.duration, out=cfg.out)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_linearize(args, cfg) -> int:
    model = plant.linearize(cfg.plant_params())
    np.set_printoptions(precision=6, suppress=False)
    print("A =\n", model.a_matrix, "\nB =\n", model.b_vector, "\nC =\n", model.c_vector)
    ok = True
    for label, mat, ref in (("A", model.a_matrix, REFERENCE_A), ("B", model.b_vector, REFERENCE_B)):
        for (i, j), want in ref.items():
            got = mat[i, j]
            rel = abs(got - want) / abs(want)
            ok &= rel <= 1e-3
            print(f"{label}[{i},{j}] = {got:.6g}  reference {want:g}  rel.err {rel:.2e}")
    return 0 if ok or args.no_check else 1


def cmd_metrics(args, cfg) -> int:
    rows = read_trace(args.trace)
    m = metrics_from_rows(rows, cfg.target_gap_m, cfg.steady_fraction)
    print(json.dumps(m.as_dict(), indent=2))
    return 0


def cmd_dataset(args, cfg) -> int:
    n = harness.generate_controller_log(cfg, args.path, args.transitions, cfg.seeds[0])
    print(f"wrote {n} transitions to {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="single seed (overrides the seeds list)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key; repeatable")

    p = argparse.ArgumentParser(prog="maglev", description="Maglev gap control: baselines and RL.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("baseline", parents=[common], help="simulate the PID or LQI loop")
    b.add_argument("--algo", choices=("pid", "lqi"), required=True)
    b.set_defaults(func=cmd_baseline)

    t = sub.add_parser("train", parents=[common], help="train DDPG or TD3")
    t.add_argument("--algo", choices=("ddpg", "td3"), required=True)
    t.add_argument("--dataset", help="CSV log used to seed the replay buffer")
    t.add_argument("--episodes", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="noise-free rollouts of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--duration", type=float, help="rollout length in seconds")
    e.set_defaults(func=cmd_eval)

    lin = sub.add_parser("linearize", parents=[common], help="print A, B, C at the equilibrium")
    lin.add_argument("--no-check", action="store_true", help="do not fail on reference mismatch")
    lin.set_defaults(func=cmd_linearize)

    m = sub.add_parser("metrics", parents=[common], help="settling, overshoot, steady-state error")
    m.add_argument("--trace", required=True)
    m.set_defaults(func=cmd_metrics)

    g = sub.add_parser("dataset", parents=[common], help="log baseline transitions for seeding")
    g.add_argument("--algo", choices=("pid", "lqi"), default="pid")
    g.add_argument("--transitions", type=int, default=10_000)
    g.add_argument("path")
    g.set_defaults(func=cmd_dataset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (ConfigError, harness.HarnessError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
