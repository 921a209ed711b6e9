"""Acceptance gate. Each test records one PASS/FAIL line (see the terminal summary).

Learning criteria train full presets and leave their run directories and a
report (figures + summary.csv) under ``$PGDK_ACCEPTANCE_DIR`` (default: a
``pgdk-acceptance`` folder in the system temp dir).
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from pgdk.actor import Actor, policy_gradient, surrogate
from pgdk.config import preset
from pgdk.critic import Critic, td_loss_grad
from pgdk.dko import DkoBatch, DkoModel, dko_loss, dko_loss_grad, solve_matrices
from pgdk.envs import LTI_A, LTI_B, LtiEnv, lti_step
from pgdk.harness import Agent, convergence_episode, evaluate, make_task_env, train
from pgdk.lqr import lti_solution, riccati_residuals, rollout
from pgdk.nets import Activation, Mlp, MlpSpec, init
from pgdk.numkit import STREAM_EVAL, finite_difference_grad, make_rng
from pgdk.report import make_report

ROOT = Path(__file__).resolve().parents[1]
KINDS = ("tanh", "silu", "gelu", "relu", "leaky_relu")


def rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12))


def _train_seeds(task, seeds, out_root, **overrides):
    results, start = [], time.perf_counter()
    for seed in seeds:
        config = preset(task, seed=seed, **overrides)
        results.append(train(config, out_root / task / f"seed{seed}"))
    elapsed = time.perf_counter() - start
    make_report([out_root / task / f"seed{s}" for s in seeds], out_root / task / "report", title=task)
    return results, elapsed


# ---------------------------------------------------------------- 1


def test_c1_gradient_fidelity(verdict):
    start = time.perf_counter()
    worst = {"dko": 0.0, "td": 0.0, "policy": 0.0}
    for trial in range(20):
        rng = make_rng(1000 + trial, 0)
        kind = Activation(KINDS[trial % len(KINDS)])
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        r, N = int(rng.integers(n, 6)), int(rng.integers(2, 9))
        x, u, xn = rng.standard_normal((N, n)), rng.standard_normal((N, m)), rng.standard_normal((N, n))

        # (a) Koopman loss w.r.t. the lifting, matrices frozen
        spec = MlpSpec(n, ((6, kind), (r, "linear")))
        dko = DkoModel(init(spec, rng), m)
        batch = DkoBatch.from_rows(x, u, xn)
        solve_matrices(dko, batch)
        _, g = dko_loss_grad(dko, batch)

        def f_dko(p):
            probe = DkoModel(Mlp(spec, p), m)
            probe.set_matrices(dko.A, dko.B, dko.C)
            return dko_loss(probe, batch)

        worst["dko"] = max(worst["dko"], rel_err(g, finite_difference_grad(f_dko, dko.lift_net.params.copy(), 1e-6)))

        # (b) semi-gradient TD loss, bootstrap target frozen
        gamma = 0.9
        cspec = MlpSpec(n, ((6, kind), (1, "linear")))
        critic = Critic(init(cspec, rng), gamma)
        cost = lambda a, b: np.sum(a**2, axis=1) + 0.1 * np.sum(b**2, axis=1)
        _, g = td_loss_grad(critic, x, u, xn, cost)
        target = cost(x, u) + gamma * critic.v_net(xn)[:, 0]
        f_td = lambda p: float(np.sum((target - Mlp(cspec, p)(x)[:, 0]) ** 2) / (2 * N))
        worst["td"] = max(worst["td"], rel_err(g, finite_difference_grad(f_td, critic.v_net.params.copy(), 1e-6)))

        # (c) one-step policy gradient vs the surrogate it differentiates
        dko.set_matrices(0.5 * rng.standard_normal((r, r)), rng.standard_normal((r, m)), rng.standard_normal((n, r)))
        aspec = MlpSpec(n, ((6, kind), (m, "tanh")), output_scale=((-2.0,) * m, (2.0,) * m))
        actor = Actor(init(aspec, rng))
        g, _ = policy_gradient(actor, dko, critic, x, cost, lambda a, b: 0.2 * b)
        f_pg = lambda p: surrogate(Actor(Mlp(aspec, p)), dko, critic, x, cost)
        worst["policy"] = max(worst["policy"], rel_err(g, finite_difference_grad(f_pg, actor.mu_net.params.copy(), 1e-6)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    assert verdict(1, "gradient fidelity (20 instances each, rel err <= 1e-4)", ok, detail), detail


# ---------------------------------------------------------------- 2


def test_c2_exact_koopman_recovery(verdict):
    start = time.perf_counter()
    rng = make_rng(2, 0)
    lift = Mlp(MlpSpec(2, ((2, "linear"),)))
    lift.weights[0][:] = np.eye(2)
    model = DkoModel(lift, 1, ridge_lambda=1e-8)
    x = rng.uniform(-2, 2, (50, 2))
    u = rng.uniform(-1, 1, (50, 1))
    xn = np.array([lti_step(a, b) for a, b in zip(x, u)])
    A, B, C = solve_matrices(model, DkoBatch.from_rows(x, u, xn))
    errs = (np.linalg.norm(A - LTI_A), np.linalg.norm(B - LTI_B), np.linalg.norm(C - np.eye(2)))
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-6 and elapsed < 1
    detail = "Frobenius errors A %.1e, B %.1e, C %.1e; %.3f s" % (*errs, elapsed)
    assert verdict(2, "exact Koopman recovery on LTI data", ok, detail), detail


# ---------------------------------------------------------------- 3


def test_c3_lqr_reference(verdict):
    start = time.perf_counter()
    sol = lti_solution(50)
    env, rng = LtiEnv(), make_rng(0, STREAM_EVAL)
    avg, final = [], []
    for _ in range(10):
        xs, _, rs = rollout(sol, env.reset(rng))
        avg.append(rs.mean())
        final.append(-float(np.sum((xs[-1] - env.spec.goal) ** 2)))
    elapsed = time.perf_counter() - start
    ok = np.mean(avg) >= -0.15 and min(final) >= -0.01 and np.max(riccati_residuals(sol)) <= 1e-9 and elapsed < 1
    detail = f"avg step reward {np.mean(avg):.4f} +- {np.std(avg):.4f}, worst final reward {min(final):.2e}; {elapsed:.3f} s"
    assert verdict(3, "horizon-50 LQR reference", ok, detail), detail


# ---------------------------------------------------------------- 4


def test_c4_lti_learning(verdict, artifact_dir):
    results, elapsed = _train_seeds("lti", range(5), artifact_dir)
    final_rew = np.median([r.evals[-1]["final_reward_mean"] for r in results])
    avg = np.median([r.evals[-1]["avg_reward_mean"] for r in results])
    ok = final_rew >= -0.05 and avg >= -0.40 and elapsed <= 600
    detail = f"median final reward {final_rew:.4f}, median avg step reward {avg:.4f}; {elapsed / 60:.1f} min"
    assert verdict(4, "LTI online learning (5 seeds)", ok, detail), detail


# ---------------------------------------------------------------- 5


def test_c5_pendulum_learning(verdict, artifact_dir):
    results, elapsed = _train_seeds("pendulum", range(5), artifact_dir)
    avg = np.median([r.evals[-1]["avg_reward_mean"] for r in results])
    err = np.median([r.evals[-1]["final_error_mean"] for r in results])
    conv = [convergence_episode([m["avg_step_reward"] for m in r.metrics], 0.95) for r in results]
    conv = [c for c in conv if c is not None]
    ok = avg >= -1.5 and err <= 0.1 and elapsed <= 1800
    detail = (f"median avg step reward {avg:.3f}, median final angle error {err:.3f} rad; "
              f"95% convergence episode {np.mean(conv):.1f} +- {np.std(conv):.1f} (reference 32.4 +- 25.6); "
              f"{elapsed / 60:.1f} min")
    assert verdict(5, "pendulum online learning (5 seeds)", ok, detail), detail


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_c6_vehicle_improvement(verdict, artifact_dir):
    # evaluate after every episode so the first and last ten evaluations exist
    results, elapsed = _train_seeds("vehicle", range(3), artifact_dir, eval_every=1)
    gains = [np.mean([e["avg_reward_mean"] for e in r.evals[-10:]]) - np.mean([e["avg_reward_mean"] for e in r.evals[:10]])
             for r in results]
    dist = np.median([r.evals[-1]["final_error_mean"] for r in results])
    ok = np.mean(gains) >= 2.0 and dist <= 1.5 and elapsed <= 7200
    detail = (f"eval reward gain last-10 vs first-10 {np.mean(gains):.2f} (per seed "
              f"{', '.join(f'{g:.2f}' for g in gains)}), median final distance {dist:.3f} m; {elapsed / 60:.1f} min")
    assert verdict(6, "surface vehicle improvement (3 seeds)", ok, detail), detail


# ---------------------------------------------------------------- 7


def test_c7_decision_latency(verdict):
    lat = {}
    for task in ("pendulum", "vehicle", "lti"):
        config = preset(task)
        env = make_task_env(config)
        agent = Agent.create(config, env)
        lat[task] = evaluate(agent.policy, env, 10, make_rng(0, STREAM_EVAL)).ms_per_decision
    ok = max(lat.values()) <= 1.0
    detail = ", ".join(f"{k} {v:.4f} ms" for k, v in lat.items())
    assert verdict(7, "per-decision policy latency <= 1 ms", ok, detail), detail


# ---------------------------------------------------------------- 8

PROPERTY_SUITES = ("tests/test_replay.py", "tests/test_envs.py", "tests/test_lqr.py", "tests/test_actor.py")


def test_c8_property_suites(verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITES],
                          cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    assert verdict(8, "standalone property suites", ok, f"{tail}; {elapsed:.1f} s"), proc.stdout[-3000:]
