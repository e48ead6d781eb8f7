"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O error.
``PEGLAB_THREADS`` caps the BLAS thread count (default 1).
"""

from __future__ import annotations

import os

_threads = os.environ.get("PEGLAB_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402

from peglab.core import Rng  # noqa: E402
from peglab.envs import ALL_KINDS, GRID_KINDS, make_env  # noqa: E402
from peglab.marl.algos import MODES  # noqa: E402
from peglab.marl.ppo import NumericError  # noqa: E402


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _gen_demos(args) -> int:
    from peglab.demos import expert_for, save_demo

    if args.fraction is not None and args.optimal:
        raise ValueError("choose either --optimal or --fraction")
    demo = expert_for(
        args.env, args.agent, Rng(args.seed, f"demos/{args.env}/{args.agent}"),
        optimal=args.fraction is None, fraction=args.fraction or 0.5, episodes=args.episodes,
    )
    save_demo(args.out, demo)
    print(f"wrote {args.out}: {demo.samples} samples, average episodic reward {demo.avg_reward:.4f}")
    return EXIT_OK


def _train(args) -> int:
    from peglab.harness import ExperimentConfig, load_config, run_experiment

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for name in ("env", "mode", "iterations", "eta", "num_envs"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.seeds:
        cfg.seeds = args.seeds
    if args.demos:
        cfg.demos = args.demos
    if args.out:
        cfg.output_dir = args.out
    result = run_experiment(cfg, workers=args.workers)
    for err in result["errors"]:
        print(f"aborted: {err}", file=sys.stderr)
    print(f"aggregate written to {result['aggregate']}")
    return EXIT_NUMERIC if result["errors"] else EXIT_OK


def _evaluate(args) -> int:
    from peglab.harness import evaluate_checkpoint

    stats = evaluate_checkpoint(args.checkpoint, args.env, args.episodes, greedy=not args.sample, seed=args.seed)
    print(f"mean_reward={stats['mean_reward']:.4f} std={stats['std_reward']:.4f} success_rate={stats['success_rate']:.4f}")
    return EXIT_OK


def _visitation(args) -> int:
    from peglab.harness import demo_visitation, export_visitation, write_visitation

    if args.demos:
        paths = write_visitation(args.out, demo_visitation(args.demos), prefix="demo_visitation")
    elif args.checkpoint:
        env = make_env(args.env)
        paths = export_visitation(args.checkpoint, env, args.episodes, Rng(args.seed, "visitation"), args.out)
    else:
        raise ValueError("give --checkpoint or --demos")
    for p in paths:
        print(p)
    return EXIT_OK


def _oracle(args) -> int:
    from peglab.harness import oracle_reward

    print(f"{oracle_reward(args.env):.6f}")
    return EXIT_OK


def _aggregate(args) -> int:
    from peglab.harness import aggregate, write_aggregate

    write_aggregate(args.out, aggregate(args.csvs))
    print(f"aggregate written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peglab", description="Demonstration-guided multi-agent RL experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="write personalized demonstrations for one agent")
    p.add_argument("--env", required=True, choices=ALL_KINDS)
    p.add_argument("--agent", type=int, required=True)
    p.add_argument("--optimal", action="store_true", help="scripted shortest-path expert (default)")
    p.add_argument("--fraction", type=float, help="early-stopped PPO expert at this fraction of optimal")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_gen_demos)

    p = sub.add_parser("train", help="run a seeded campaign from a config file")
    p.add_argument("--config")
    p.add_argument("--env", choices=ALL_KINDS)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--iterations", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--num-envs", dest="num_envs", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--demos", nargs="+")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True, choices=ALL_KINDS)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--sample", action="store_true", help="sample actions instead of argmax")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("visitation", help="export per-agent visitation heatmaps as CSV")
    p.add_argument("--env", choices=GRID_KINDS, default="lava2")
    p.add_argument("--checkpoint")
    p.add_argument("--demos", nargs="+")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_visitation)

    p = sub.add_parser("oracle", help="best achievable episodic reward of a gridworld")
    p.add_argument("--env", required=True, choices=ALL_KINDS)
    p.set_defaults(func=_oracle)

    p = sub.add_parser("aggregate", help="mean/std curve across per-seed CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_aggregate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
