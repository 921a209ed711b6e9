"""Finite-horizon discrete-time LQR, used as the exact-dynamics reference on the LTI task."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import LTI_A, LTI_B, LTI_GOAL, lti_reward, lti_step


@dataclass(frozen=True)
class LqrSolution:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gains: tuple[np.ndarray, ...]  # K_0 .. K_{H-1}
    cost_to_go: tuple[np.ndarray, ...]  # P_0 .. P_H

    @property
    def horizon(self) -> int:
        return len(self.gains)


def solve(A, B, Q, R, horizon: int) -> LqrSolution:
    """Backward Riccati recursion with terminal weight ``P_H = Q``."""
    A, B, Q = (np.atleast_2d(np.asarray(M, dtype=np.float64)) for M in (A, B, Q))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
        raise ValueError("input weight R must be positive definite")
    P = Q.copy()
    Ps, Ks = [P], []
    for _ in range(horizon):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        Ks.append(K)
        Ps.append(P)
    return LqrSolution(A, B, Q, R, tuple(Ks[::-1]), tuple(Ps[::-1]))


def riccati_residuals(sol: LqrSolution) -> np.ndarray:
    """Max-abs residual of ``P_t = Q + A' P_{t+1} (A - B K_t)`` at each stage."""
    A, B, Q, R = sol.A, sol.B, sol.Q, sol.R
    out = []
    for t, K in enumerate(sol.gains):
        P_next = sol.cost_to_go[t + 1]
        K_ref = np.linalg.solve(R + B.T @ P_next @ B, B.T @ P_next @ A)
        res_P = sol.cost_to_go[t] - (Q + A.T @ P_next @ (A - B @ K_ref))
        out.append(max(np.max(np.abs(res_P)), np.max(np.abs(K - K_ref))))
    return np.array(out)


def control(sol: LqrSolution, x, goal, t: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """``clip(-K_t (x - goal))`` in error coordinates."""
    if not 0 <= t < sol.horizon:
        raise IndexError(f"step {t} outside the LQR horizon {sol.horizon}")
    e = np.asarray(x, dtype=np.float64) - np.asarray(goal, dtype=np.float64)
    return np.clip(-sol.gains[t] @ e, lo, hi)


def lti_solution(horizon: int = 50) -> LqrSolution:
    return solve(LTI_A, LTI_B, np.eye(2), np.array([[0.001]]), horizon)


class LqrPolicy:
    """Adapter for the evaluation harness.

    With ``receding=True`` the first-stage gain is applied at every step (a
    receding-horizon LQR), so episodes may be longer than the horizon.
    """

    def __init__(self, sol: LqrSolution, goal=LTI_GOAL, receding: bool = True):
        self.sol, self.goal, self.receding = sol, np.asarray(goal, dtype=np.float64), receding

    def __call__(self, x, t: int) -> np.ndarray:
        return control(self.sol, x, self.goal, 0 if self.receding else t)


def rollout(sol: LqrSolution, x0, steps: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed loop on the exact LTI with time-varying gains; returns states, inputs, rewards."""
    steps = sol.horizon if steps is None else steps
    xs, us, rs = [np.asarray(x0, dtype=np.float64)], [], []
    for t in range(steps):
        u = control(sol, xs[-1], LTI_GOAL, t)
        rs.append(lti_reward(xs[-1], u))
        us.append(u)
        xs.append(lti_step(xs[-1], u))
    return np.array(xs), np.array(us), np.array(rs)


def write_gains_csv(sol: LqrSolution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = sol.gains[0].size
        w.writerow(["t"] + [f"k{i}" for i in range(n)])
        for t, K in enumerate(sol.gains):
            w.writerow([t] + [repr(float(k)) for k in K.ravel()])
