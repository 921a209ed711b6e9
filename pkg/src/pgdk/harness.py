"""Online training loop, evaluation rollouts, offline training and run artifacts."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import actor as actor_mod
from . import critic as critic_mod
from .actor import Actor
from .config import TrainConfig
from .critic import Critic
from .dko import DkoBatch, DkoModel, load_model, save_model, solve_matrices, update_lift_params
from .envs import Env, make_env
from .nets import MlpSpec, init, load_params, save_params
from .numkit import (STREAM_EVAL, STREAM_INIT_ACTOR, STREAM_INIT_CRITIC, STREAM_INIT_LIFT, STREAM_NOISE,
                     STREAM_RESET, STREAM_SAMPLE, AdamState, NonFiniteError, RunningMean, make_rng)
from .replay import DecaySchedule, OuProcess, ReplayMemory, TransitionBatch, explore, reset_noise

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("episode", "iteration", "episode_return", "avg_step_reward", "dko_loss", "td_loss",
                   "surrogate", "final_error", "sigma", "n_updates")
EVAL_COLUMNS = ("episode", "avg_reward_mean", "avg_reward_std", "final_error_mean", "final_error_std",
                "final_reward_mean", "ms_per_decision")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Agent:
    dko: DkoModel
    critic: Critic
    actor: Actor
    adam_lift: AdamState
    adam_critic: AdamState
    adam_actor: AdamState
    unwrap_angles: bool = True

    @classmethod
    def create(cls, config: TrainConfig, env: Env) -> "Agent":
        spec = env.spec
        n, m = spec.obs_dim, spec.input_dim
        lift_spec = MlpSpec.from_string(n, config.lift_layers)
        critic_spec = MlpSpec.from_string(n, config.critic_layers)
        actor_spec = MlpSpec.from_string(n, config.actor_layers,
                                         output_scale=(tuple(spec.action_lo), tuple(spec.action_hi)))
        if critic_spec.output_dim != 1 or actor_spec.output_dim != m:
            raise ValueError("critic must output 1 value and the actor one value per input")
        lift = init(lift_spec, make_rng(config.seed, STREAM_INIT_LIFT))
        dko = DkoModel(lift, m, config.ridge_lambda)
        critic = Critic(init(critic_spec, make_rng(config.seed, STREAM_INIT_CRITIC)), config.gamma, config.semi_gradient,
                        config.value_scale)
        actor = Actor(init(actor_spec, make_rng(config.seed, STREAM_INIT_ACTOR)))
        return cls(dko, critic, actor,
                   AdamState.zeros(lift_spec.n_params, config.lr_lift),
                   AdamState.zeros(critic_spec.n_params, config.lr_critic),
                   AdamState.zeros(actor_spec.n_params, config.lr_actor), config.unwrap_angles)

    def policy(self, obs: np.ndarray, t: int = 0) -> np.ndarray:
        return self.actor.mu_net(obs)

    def learn(self, batch: TransitionBatch, env: Env) -> tuple[float, float, float]:
        """One iteration on a shared batch: Koopman model, then critic, then actor."""
        # the model sees successors without 2 pi jumps; the critic keeps the true states
        x_next = env.continuous_successor(batch.x, batch.x_next) if self.unwrap_angles else batch.x_next
        db = DkoBatch.from_rows(batch.x, batch.u, x_next)
        solve_matrices(self.dko, db)
        self.adam_lift, dko_loss = update_lift_params(self.dko, db, self.adam_lift)
        self.adam_critic, td_loss = critic_mod.update(self.critic, batch.x, batch.u, batch.x_next, env.cost,
                                                      self.adam_critic)
        grad, objective = actor_mod.policy_gradient(self.actor, self.dko, self.critic, batch.x, env.cost,
                                                    env.cost_grad_u)
        self.adam_actor = actor_mod.update(self.actor, grad, self.adam_actor)
        return dko_loss, td_loss, objective

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.dko, directory / "dko")
        save_params(self.critic.v_net, directory / "critic.bin")
        save_params(self.actor.mu_net, directory / "actor.bin")


@dataclass
class EvalSummary:
    avg_reward_mean: float
    avg_reward_std: float
    final_error_mean: float
    final_error_std: float
    final_reward_mean: float
    ms_per_decision: float
    avg_rewards: list = field(default_factory=list)
    final_errors: list = field(default_factory=list)
    final_rewards: list = field(default_factory=list)


@dataclass
class TrainResult:
    agent: Agent
    config: TrainConfig
    metrics: list[dict]
    evals: list[dict]
    memory: ReplayMemory
    timings: list[float]


def make_task_env(config: TrainConfig) -> Env:
    return make_env(config.task, dt=config.vehicle_dt) if config.task == "vehicle" else make_env(config.task)


def run_episode(env: Env, policy: Callable[[np.ndarray, int], np.ndarray], obs: np.ndarray,
                record: bool = False) -> dict:
    rewards, times, rows = [], [], []
    done = False
    while not done:
        t0 = time.perf_counter()
        u = policy(obs, env.t)
        times.append(time.perf_counter() - t0)
        if record:
            rows.append((env.t, env.state.copy(), np.atleast_1d(u).copy()))
        res = env.step(u)
        rewards.append(res.reward)
        if record:
            rows[-1] = rows[-1] + (res.reward, res.done)
        obs, done = res.next_obs, res.done
    return {"rewards": np.array(rewards), "times": np.array(times), "final_error": env.final_error(), "rows": rows}


def evaluate(policy: Callable[[np.ndarray, int], np.ndarray], task: str | Env, n_episodes: int = 10,
             rng: np.random.Generator | None = None, trajectories: list | None = None) -> EvalSummary:
    """Noise-free rollouts from fresh resets; per-step reward, final goal error and decision latency."""
    env = make_env(task) if isinstance(task, str) else task
    rng = rng if rng is not None else make_rng(0, STREAM_EVAL)
    avg, final_err, final_rew, times = [], [], [], []
    for _ in range(n_episodes):
        out = run_episode(env, policy, env.reset(rng), record=trajectories is not None)
        avg.append(out["rewards"].mean())
        final_err.append(out["final_error"])
        final_rew.append(out["rewards"][-1])
        times.append(out["times"])
        if trajectories is not None:
            trajectories.append(out["rows"])
    return EvalSummary(float(np.mean(avg)), float(np.std(avg)), float(np.mean(final_err)), float(np.std(final_err)),
                       float(np.mean(final_rew)), 1e3 * float(np.mean(np.concatenate(times))),
                       [float(a) for a in avg], [float(e) for e in final_err], [float(r) for r in final_rew])


def _eval_row(episode: int, s: EvalSummary) -> dict:
    return {"episode": episode, **{k: getattr(s, k) for k in EVAL_COLUMNS[1:]}}


def _learn_or_abort(agent: Agent, batch: TransitionBatch, env: Env, out_dir: Path | None):
    try:
        losses = agent.learn(batch, env)
    except (NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as exc:
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            np.savez(out_dir / "diverged_batch.npz", x=batch.x, u=batch.u, x_next=batch.x_next)
        raise TrainingDiverged(f"training diverged: {exc}") from exc
    if not all(np.isfinite(losses)):
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            np.savez(out_dir / "diverged_batch.npz", x=batch.x, u=batch.u, x_next=batch.x_next)
        raise TrainingDiverged(f"non-finite loss {losses}")
    return losses


def train(config: TrainConfig, out_dir: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Online policy gradient with a deep Koopman model: one learner iteration per environment step."""
    config.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    env = make_task_env(config)
    agent = Agent.create(config, env)
    memory = ReplayMemory(config.capacity, env.spec.obs_dim, env.spec.input_dim)
    return _run(config, env, agent, memory, out_dir, progress, online=True)


def train_offline(config: TrainConfig, dataset: TransitionBatch, out_dir: str | Path | None = None,
                  progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Same update rules, batches drawn from a fixed dataset; ``batch_size == len(dataset)`` gives full-batch steps."""
    config.validate()
    env = make_task_env(config)
    if dataset.x.shape[1] != env.spec.obs_dim or dataset.u.shape[1] != env.spec.input_dim:
        raise ValueError("replay dataset dimensions do not match the task")
    if len(dataset) == 0:
        raise ValueError("empty replay dataset")
    if config.batch_size > len(dataset):
        raise ValueError(f"batch size {config.batch_size} exceeds the dataset size {len(dataset)}")
    agent = Agent.create(config, env)
    memory = ReplayMemory.from_batch(dataset)
    return _run(config, env, agent, memory, Path(out_dir) if out_dir else None, progress, online=False)


def _run(config, env, agent, memory, out_dir, progress, online: bool) -> TrainResult:
    reset_rng = make_rng(config.seed, STREAM_RESET)
    sample_rng = make_rng(config.seed, STREAM_SAMPLE)
    noise_rng = make_rng(config.seed, STREAM_NOISE)
    ou = OuProcess(env.spec.input_dim, config.ou_theta, config.ou_sigma, config.ou_dt)
    schedule = DecaySchedule(config.sigma0, config.sigma_decay, config.sigma_floor)
    full_batch = not online and config.batch_size == len(memory)
    metrics, evals, timings = [], [], []
    k = 0
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(config.to_json())
    for episode in range(config.episodes):
        sigma = schedule(episode)
        returns, d_loss, t_loss, j_hat = [], RunningMean(), RunningMean(), RunningMean()
        t_start = time.perf_counter()
        if online:
            obs = env.reset(reset_rng)
            reset_noise(ou)
            done = False
            while not done:
                u = explore(agent.policy(obs), ou, sigma, noise_rng, env.spec.action_box)
                res = env.step(u)
                memory.push(obs, u, res.next_obs)
                returns.append(res.reward)
                obs, done = res.next_obs, res.done
                if len(memory) >= config.batch_size:
                    losses = _learn_or_abort(agent, memory.sample(config.batch_size, sample_rng), env, out_dir)
                    for acc, val in zip((d_loss, t_loss, j_hat), losses):
                        acc.add(val)
                k += 1
            final_error = env.final_error()
        else:
            for _ in range(config.horizon + 1):
                batch = memory.contents() if full_batch else memory.sample(config.batch_size, sample_rng)
                losses = _learn_or_abort(agent, batch, env, out_dir)
                for acc, val in zip((d_loss, t_loss, j_hat), losses):
                    acc.add(val)
                k += 1
        n_steps = len(returns) if online else config.horizon + 1
        timings.append(1e3 * (time.perf_counter() - t_start) / max(n_steps, 1))
        eval_summary = None
        due = config.eval_every and ((episode + 1) % config.eval_every == 0 or episode + 1 == config.episodes)
        if due or not online:
            eval_summary = evaluate(agent.policy, make_task_env(config), config.eval_episodes,
                                    make_rng(config.seed, STREAM_EVAL))
            evals.append(_eval_row(episode + 1, eval_summary))
        if not online:
            # no environment interaction offline: report the noise-free evaluation instead
            returns = [eval_summary.avg_reward_mean] * n_steps
            final_error = eval_summary.final_error_mean
        row = {
            "episode": episode + 1, "iteration": k,
            "episode_return": float(np.sum(returns)), "avg_step_reward": float(np.mean(returns)),
            "dko_loss": d_loss.mean, "td_loss": t_loss.mean, "surrogate": j_hat.mean,
            "final_error": float(final_error), "sigma": sigma, "n_updates": d_loss.count,
        }
        metrics.append(row)
        if progress is not None:
            progress({**row, "eval": eval_summary, "ms_per_step": timings[-1]})
    result = TrainResult(agent, config, metrics, evals, memory, timings)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def write_run(result: TrainResult, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(result.config.to_json())
    _write_csv(out_dir / "metrics.csv", METRICS_COLUMNS, result.metrics)
    _write_csv(out_dir / "eval.csv", EVAL_COLUMNS, result.evals)
    _write_csv(out_dir / "timings.csv", ("episode", "ms_per_step"),
               [{"episode": i + 1, "ms_per_step": t} for i, t in enumerate(result.timings)])
    result.agent.save(out_dir / "checkpoint")
    result.memory.dump(out_dir / "replay.bin")


def load_agent(run_dir: str | Path) -> tuple[Agent, TrainConfig]:
    run_dir = Path(run_dir)
    config = TrainConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    ckpt = run_dir / "checkpoint" if (run_dir / "checkpoint").is_dir() else run_dir
    env = make_task_env(config)
    agent = Agent.create(config, env)
    agent.dko = load_model(ckpt / "dko")
    agent.critic.v_net = load_params(ckpt / "critic.bin", agent.critic.v_net.spec)
    agent.actor.mu_net = load_params(ckpt / "actor.bin", agent.actor.mu_net.spec)
    return agent, config


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def convergence_episode(values, fraction: float = 0.95, window: int = 10) -> int | None:
    """First episode (1-based) whose trailing ``window`` mean closes ``fraction`` of the gap
    between the first trailing mean and the best trailing mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        return None
    trailing = np.convolve(values, np.ones(window) / window, mode="valid")
    start, best = trailing[0], trailing.max()
    if best <= start:
        return window
    target = start + fraction * (best - start)
    return int(np.argmax(trailing >= target)) + window


def write_trajectory_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n, m = rows[0][1].size, rows[0][2].size
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["reward", "done"])
        for t, x, u, r, done in rows:
            w.writerow([t, *map(repr, map(float, x)), *map(repr, map(float, u)), repr(float(r)), int(done)])


def summary_dict(s: EvalSummary) -> dict:
    return asdict(s)
