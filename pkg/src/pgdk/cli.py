"""Command line entry point: ``pgdk {train,eval,train-offline,lqr,dump-replay,report}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import lqr
from .config import TASKS, load_config, parse_overrides, write_config_file
from .envs import LtiEnv
from .harness import (EVAL_COLUMNS, TrainingDiverged, evaluate, load_agent, make_task_env, train, train_offline,
                      write_trajectory_csv)
from .numkit import STREAM_EVAL, make_rng
from .replay import ReplayMemory, load_replay
from .report import make_report

log = logging.getLogger("pgdk")


def _progress(row: dict) -> None:
    msg = (f"episode {row['episode']:4d}  avg reward {row['avg_step_reward']:9.4f}  "
           f"dko {row['dko_loss']:.3e}  td {row['td_loss']:.3e}  sigma {row['sigma']:.3f}  "
           f"{row['ms_per_step']:.1f} ms/step")
    e = row.get("eval")
    if e is not None:
        msg += f"  | eval {e.avg_reward_mean:.4f} +- {e.avg_reward_std:.4f}  final err {e.final_error_mean:.4f}"
    log.info(msg)


def _print_eval(label: str, s) -> None:
    print(f"{label}: avg step reward {s.avg_reward_mean:.4f} +- {s.avg_reward_std:.4f}, "
          f"final error {s.final_error_mean:.4f} +- {s.final_error_std:.4f}, "
          f"final reward {s.final_reward_mean:.4f}, {s.ms_per_decision:.4f} ms/decision")


def _write_eval(out_dir: Path, s, trajectories=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS[1:])
        w.writerow([repr(getattr(s, k)) for k in EVAL_COLUMNS[1:]])
    with open(out_dir / "eval_episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "avg_reward", "final_error", "final_reward"])
        for i, row in enumerate(zip(s.avg_rewards, s.final_errors, s.final_rewards)):
            w.writerow([i] + [repr(v) for v in row])
    for i, rows in enumerate(trajectories or []):
        write_trajectory_csv(rows, out_dir / f"trajectory_{i}.csv")


def _config_from_args(args, task=None):
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    return load_config(task or args.task, args.config, overrides)


def cmd_train(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    try:
        result = train(config, out, progress=None if args.quiet else _progress)
    except TrainingDiverged as exc:
        log.error("%s (offending batch saved under %s)", exc, out)
        return 2
    write_config_file(config, out / "config.txt")
    if result.evals:
        last = result.evals[-1]
        print(f"final evaluation: avg step reward {last['avg_reward_mean']:.4f} +- {last['avg_reward_std']:.4f}, "
              f"final error {last['final_error_mean']:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    agent, config = load_agent(args.checkpoint)
    seed = config.seed if args.seed is None else args.seed
    trajectories = [] if args.trajectories else None
    s = evaluate(agent.policy, make_task_env(config), args.episodes, make_rng(seed, STREAM_EVAL), trajectories)
    _print_eval(f"{config.task} policy", s)
    if trajectories:
        trajectories = trajectories[:args.trajectories]
    _write_eval(Path(args.out or args.checkpoint), s, trajectories)
    return 0


def cmd_train_offline(args) -> int:
    config = _config_from_args(args)
    env = make_task_env(config)
    data = load_replay(args.replay, env.spec.obs_dim, env.spec.input_dim)
    if args.full_batch:
        config = config.replace(batch_size=len(data))
    out = Path(args.out)
    try:
        result = train_offline(config, data, out, progress=None if args.quiet else _progress)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return 2
    last = result.evals[-1] if result.evals else None
    if last:
        print(f"offline, {len(data)} transitions: avg step reward {last['avg_reward_mean']:.4f}, "
              f"final reward {last['final_reward_mean']:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_lqr(args) -> int:
    sol = lqr.lti_solution(args.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lqr.write_gains_csv(sol, out / "gains.csv")
    print(f"K_0 = {np.array2string(sol.gains[0].ravel(), precision=6)}, "
          f"max Riccati residual {lqr.riccati_residuals(sol).max():.2e}")
    # time-varying gains over the horizon from reset-box starts
    rng = make_rng(args.seed, STREAM_EVAL)
    env = LtiEnv()
    avg, final_rew, final_err = [], [], []
    for _ in range(args.episodes):
        xs, _, rs = lqr.rollout(sol, env.reset(rng))
        avg.append(rs.mean())
        final_err.append(float(np.linalg.norm(xs[-1] - env.spec.goal)))
        final_rew.append(-final_err[-1] ** 2)
    print(f"horizon {args.horizon}: avg step reward {np.mean(avg):.4f} +- {np.std(avg):.4f}, "
          f"final reward {np.mean(final_rew):.4f}, final error {np.mean(final_err):.4f}")
    # receding-horizon gain on the full task episode, through the shared evaluation path
    s = evaluate(lqr.LqrPolicy(sol), LtiEnv(), args.episodes, make_rng(args.seed, STREAM_EVAL))
    _print_eval("receding horizon, full episode", s)
    _write_eval(out, s)
    return 0


def cmd_dump_replay(args) -> int:
    src = Path(args.run)
    data = load_replay(src / "replay.bin" if src.is_dir() else src)
    if args.last:
        data = type(data)(*(a[-args.last:] for a in data))
    mem = ReplayMemory.from_batch(data)
    if args.out:
        mem.dump(args.out)
    print(f"{len(mem)} transitions, state dim {mem.state_dim}, input dim {mem.input_dim}"
          + (f" -> {args.out}" if args.out else ""))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n, m = mem.state_dim, mem.input_dim
            w.writerow([f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + [f"xn{i}" for i in range(n)])
            for row in np.hstack(list(mem.contents())):
                w.writerow([repr(float(v)) for v in row])
    return 0


def cmd_report(args) -> int:
    for path in make_report(args.runs, args.out, args.title):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgdk", description="Policy gradient with a deep Koopman model.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp, task_required):
        sp.add_argument("--task", choices=TASKS, required=task_required)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("-q", "--quiet", action="store_true", help="no per-episode progress")

    sp = sub.add_parser("train", help="online training")
    config_args(sp, task_required=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained checkpoint")
    sp.add_argument("--checkpoint", required=True, help="run directory written by train")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trajectories", type=int, default=0, help="write trajectory CSVs for the first N episodes")
    sp.add_argument("--out", help="output directory (default: the checkpoint directory)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("train-offline", help="train from a fixed replay file")
    config_args(sp, task_required=False)
    sp.add_argument("--replay", required=True)
    sp.add_argument("--full-batch", action="store_true", help="use the whole dataset as every batch")
    sp.set_defaults(func=cmd_train_offline, task="lti")

    sp = sub.add_parser("lqr", help="finite-horizon LQR baseline on the LTI task")
    sp.add_argument("--horizon", type=int, default=50)
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="lqr")
    sp.set_defaults(func=cmd_lqr)

    sp = sub.add_parser("dump-replay", help="export the replay memory of a run")
    sp.add_argument("--run", required=True, help="run directory or replay file")
    sp.add_argument("--out", help="replay file to write")
    sp.add_argument("--last", type=int, help="keep only the most recent N transitions")
    sp.add_argument("--csv", help="also write the transitions as CSV")
    sp.set_defaults(func=cmd_dump_replay)

    sp = sub.add_parser("report", help="figures and summary CSV from run directories")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--title", default="")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        log.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
