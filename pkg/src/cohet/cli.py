"""Command-line entry point: train / eval / plot / selftest.

Every run writes a self-contained directory: the echoed config, metrics.csv
(fixed schema), and periodic checkpoints.  All randomness flows from the
configured seeds; rerunning with the same config and seed reproduces the
metrics file byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, scenario_fingerprint
from .config import ConfigError, RunConfig, apply_overrides, parse_config, render_config
from .trainer import TrainingDiverged, evaluate, train


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    return apply_overrides(
        cfg,
        algo=getattr(args, "algo", None),
        scenario=getattr(args, "scenario", None),
        seed=getattr(args, "seed", None),
        iterations=getattr(args, "iters", None),
        out_dir=getattr(args, "out", None),
    )


def _run_dir(cfg: RunConfig, seed: int) -> Path:
    name = f"{cfg.scenario.scenario}_{cfg.algo.mode}_seed{seed}"
    return Path(cfg.run.out_dir) / name


def cmd_train(args) -> int:
    cfg = _load_config(args)
    for seed in cfg.run.seeds:
        run_dir = _run_dir(cfg, seed)
        if run_dir.exists() and any(run_dir.iterdir()):
            if not args.force:
                print(f"error: {run_dir} already exists; use --force to overwrite",
                      file=sys.stderr)
                return 1
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.ini").write_text(render_config(cfg))

        def progress(k, row, _seed=seed):
            if not args.quiet and (k % args.log_every == 0 or k == 1):
                print(f"seed {_seed} iter {k}: episodic_reward_mean="
                      f"{row['episodic_reward_mean']:.4f}", flush=True)

        result = train(cfg.scenario, cfg.algo, cfg.ppo, cfg.model,
                       iterations=cfg.run.iterations, n_envs=cfg.run.n_envs, seed=seed,
                       out_dir=run_dir, checkpoint_interval=cfg.run.checkpoint_interval,
                       progress=progress)
        last = result.rows[-1]
        print(f"done: seed {seed} iterations {result.iterations} "
              f"env_steps {result.env_steps} "
              f"final_episodic_reward_mean {last['episodic_reward_mean']!r} "
              f"-> {run_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    expected = scenario_fingerprint(cfg.scenario, cfg.model)
    models, agents, _ = load_checkpoint(args.ckpt, expected_fingerprint=expected)
    stats = evaluate(models, agents, cfg.scenario, cfg.algo.mode,
                     episodes=args.episodes, seed=args.seed if args.seed is not None else 0,
                     aggregation=cfg.algo.aggregation)
    print(f"episodes {stats['episodes']} "
          f"mean_episodic_reward {stats['mean_episodic_reward']!r} "
          f"min {stats['min_episodic_reward']!r} max {stats['max_episodic_reward']!r}")
    for i, v in enumerate(stats["per_agent_mean"]):
        print(f"agent {i} mean_return {v!r}")
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_runs

    written = plot_runs(args.run_dirs, args.out)
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_selftest(args) -> int:
    from .selfcheck import run_selftest

    return run_selftest(verbose=not args.quiet)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohet",
        description="Decentralized multi-agent RL workbench: graph-policy PPO "
                    "with neighbor-prediction intrinsic rewards.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training per the config")
    p_train.add_argument("--config", type=str, default=None, help="config file path")
    p_train.add_argument("--algo", type=str, default=None,
                         help="override algo mode (cohet-team, cohet-self, "
                              "baseline-hetgppo, ippo)")
    p_train.add_argument("--scenario", type=str, default=None,
                         help="override scenario (spread, navigation, flocking)")
    p_train.add_argument("--seed", type=int, default=None, help="override seed list")
    p_train.add_argument("--iters", type=int, default=None, help="override iterations")
    p_train.add_argument("--out", type=str, default=None, help="override output directory")
    p_train.add_argument("--force", action="store_true", help="overwrite existing run dirs")
    p_train.add_argument("--quiet", action="store_true")
    p_train.add_argument("--log-every", type=int, default=10)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    p_eval.add_argument("--ckpt", type=str, required=True)
    p_eval.add_argument("--config", type=str, default=None)
    p_eval.add_argument("--algo", type=str, default=None)
    p_eval.add_argument("--scenario", type=str, default=None)
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(fn=cmd_eval)

    p_plot = sub.add_parser("plot", help="emit SVG charts and a merged CSV")
    p_plot.add_argument("run_dirs", nargs="+", help="run directories with metrics.csv")
    p_plot.add_argument("--out", type=str, default="plots")
    p_plot.set_defaults(fn=cmd_plot)

    p_self = sub.add_parser("selftest", help="run the built-in oracle/property checks")
    p_self.add_argument("--quiet", action="store_true")
    p_self.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
