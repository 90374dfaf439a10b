"""Command-line interface.

Subcommands:
    run            execute an experiment and write the metrics CSV
    oracle         solve the centralized problem and print F at the optimum
    bound          print the convergence-bound envelope as t,value rows
    schedule-dump  print the transmission schedule as `device block` lines

Options can come from a key=value config file (field names, # comments) with
explicit flags taking precedence.
"""

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import scheduler, topology
from .harness import (
    DivergenceError,
    ExperimentConfig,
    TheoremBound,
    build_problem,
    build_topology,
    evaluate_bound,
    run_experiment,
)
from .problems import solve_centralized

_CONFIG_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config_file(path):
    """key = value lines; keys are ExperimentConfig field names."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _parse_value(key, value)
    return out


def _parse_value(key, value):
    if key == "alpha":
        return value if value == "auto" else float(value)
    default = getattr(ExperimentConfig(), key)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _alpha_arg(value):
    return value if value == "auto" else float(value)


def _add_problem_flags(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--devices", type=int, dest="n_devices")
    p.add_argument("--dim", type=int, dest="dimension")
    p.add_argument("--data", choices=["synthetic", "idx"])
    p.add_argument("--samples", type=int)
    p.add_argument("--test-samples", type=int, dest="test_samples")
    p.add_argument("--flip-rate", type=float, dest="flip_rate")
    p.add_argument("--train-images", dest="train_images")
    p.add_argument("--train-labels", dest="train_labels")
    p.add_argument("--class-a", type=int, dest="class_a")
    p.add_argument("--class-b", type=int, dest="class_b")
    p.add_argument("--train-count", type=int, dest="train_count")
    p.add_argument("--test-count", type=int, dest="test_count")
    p.add_argument("--per-device", type=int, dest="per_device")
    p.add_argument("--oracle-tol", type=float, dest="oracle_tol")


def _add_topology_flags(p):
    p.add_argument("--gamma", type=float)
    p.add_argument("--topology-file", dest="topology_file")


def build_parser():
    parser = argparse.ArgumentParser(prog="airfed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="key=value config file")
    _add_problem_flags(run)
    _add_topology_flags(run)
    run.add_argument("--variant", choices=["dsgd", "dsgt", "dsgt-vr"])
    run.add_argument("--consensus", choices=["error-free", "aircomp"])
    run.add_argument("--iters", type=int)
    run.add_argument("--alpha", type=_alpha_arg, help="step size, or 'auto'")
    noise = run.add_mutually_exclusive_group()
    noise.add_argument("--noise-dbm", type=float,
                       help="noise power in dBm (sigma2 = 10^(dBm/10))")
    noise.add_argument("--sigma2", type=float, help="noise power, linear scale")
    run.add_argument("--power", type=float)
    run.add_argument("--schedule", choices=["naive", "coloring"])
    run.add_argument("--out", help="metrics CSV path")
    run.add_argument("--reps", type=int, dest="repetitions")
    run.add_argument("--jobs", type=int)
    run.add_argument("--dump-mixing", help="also save the mixing matrix edge list here")

    oracle = sub.add_parser("oracle", help="print the centralized optimum")
    oracle.add_argument("--config", help="key=value config file")
    _add_problem_flags(oracle)

    bound = sub.add_parser("bound", help="evaluate the convergence-bound envelope")
    bound.add_argument("--rho", type=float, required=True)
    bound.add_argument("--c", type=float, required=True, dest="c_const")
    bound.add_argument("--smoothness", type=float, required=True)
    bound.add_argument("--devices", type=int, required=True)
    bound.add_argument("--dim", type=int, required=True)
    bound.add_argument("--sigma2", type=float, default=0.0)
    bound.add_argument("--b-bound", type=float, default=0.0, dest="b_bound")
    bound.add_argument("--gamma", type=float, default=0.5)
    bound.add_argument("--power", type=float, default=100.0)
    bound.add_argument("--iters", type=int, default=100)

    dump = sub.add_parser("schedule-dump", help="print `device block` lines")
    dump.add_argument("--config", help="key=value config file")
    dump.add_argument("--seed", type=int)
    dump.add_argument("--devices", type=int, dest="n_devices")
    _add_topology_flags(dump)
    dump.add_argument("--schedule", choices=["naive", "coloring"])
    return parser


def _config_from_args(args):
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(ExperimentConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if getattr(args, "noise_dbm", None) is not None:
        values["sigma2"] = 10.0 ** (args.noise_dbm / 10.0)
    if getattr(args, "variant", None):
        values["variant"] = args.variant.replace("-", "_")
    if getattr(args, "consensus", None):
        values["consensus"] = args.consensus.replace("-", "_")
    config = ExperimentConfig(**values)
    config.validate()
    return config


def _cmd_run(args):
    config = _config_from_args(args)
    if args.dump_mixing:
        _, mixing = build_topology(config)
        topology.save_mixing(mixing, args.dump_mixing)
    try:
        result = run_experiment(config)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        if err.records:
            last = err.records[-1]
            print(f"last good iteration: {last.iteration} (gap {last.gap_mean:.3e})",
                  file=sys.stderr)
        return 2
    for key, value in result.summary.items():
        print(f"{key}={value}")
    if config.out:
        print(f"csv={config.out}")
    return 0


def _cmd_oracle(args):
    config = _config_from_args(args)
    problem = build_problem(config)
    theta_opt, f_opt = solve_centralized(problem, config.oracle_tol)
    print(f"f_opt={f_opt!r}")
    print(f"grad_norm={float(np.linalg.norm(problem.global_grad(theta_opt)))!r}")
    print(f"lambda={problem.lam!r}")
    print(f"smoothness={problem.smoothness()!r}")
    print(f"dim={problem.dim}")
    print(f"device_sizes={problem.device_sizes()}")
    return 0


def _cmd_bound(args):
    bound = TheoremBound(rho=args.rho, c=args.c_const, n_devices=args.devices,
                         dim=args.dim, sigma2=args.sigma2, b_bound=args.b_bound,
                         gamma=args.gamma, power=args.power)
    print("t,bound")
    for t in range(args.iters + 1):
        print(f"{t},{evaluate_bound(bound, args.smoothness, t)!r}")
    return 0


def _cmd_schedule_dump(args):
    config = _config_from_args(args)
    graph, _ = build_topology(config)
    if args.schedule == "coloring":
        sched = scheduler.coloring_schedule(graph)
    else:
        sched = scheduler.naive_schedule(graph)
    print(scheduler.dump_schedule(sched))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    commands = {
        "run": _cmd_run,
        "oracle": _cmd_oracle,
        "bound": _cmd_bound,
        "schedule-dump": _cmd_schedule_dump,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
