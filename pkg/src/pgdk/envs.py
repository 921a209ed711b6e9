"""Benchmark environments: inverted pendulum, 3-DOF surface vehicle and a 2-state LTI system.

Each environment exposes its stage cost ``c = -r`` and ``dc/du`` as functions
of the *observation* and input so the learner can evaluate them on replayed
batches (rows are samples).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# pendulum
PEND_G, PEND_M, PEND_L = 10.0, 1.0, 1.0
PEND_DT = 0.02
PEND_MAX_SPEED = 8.0
PEND_MAX_TORQUE = 2.0

# surface vehicle
VEH_M, VEH_IZ = 8.0, 2.5
VEH_DU, VEH_DV, VEH_DR = 3.0, 6.0, 1.5
VEH_DT = 0.05
VEH_GOAL = np.array([3.0, 4.0, 0.0])
VEH_TAU_MAX = np.array([12.0, 4.0])
VEH_SUCCESS_RADIUS = 0.05
VEH_SUCCESS_BONUS = 80.0

# LTI
LTI_A = np.array([[0.5, 0.5], [0.0, 1.0]])
LTI_B = np.array([[0.0], [1.0]])
LTI_GOAL = np.array([1.0, 1.0])
LTI_BOUND = 5.0

HORIZON = 200


def wrap_angle(a):
    """Map onto [-pi, pi]; in-range angles pass through bit-exactly."""
    a = np.asarray(a, dtype=np.float64)
    return np.where(np.abs(a) <= np.pi, a, (a + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    input_dim: int
    obs_dim: int
    action_lo: np.ndarray
    action_hi: np.ndarray
    state_lo: np.ndarray
    state_hi: np.ndarray
    dt: float
    horizon: int
    init_lo: np.ndarray
    init_hi: np.ndarray
    goal: np.ndarray

    @property
    def action_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.action_lo, self.action_hi


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    cost: float
    done: bool
    success: bool = False


# ---------------------------------------------------------------- pendulum

def pendulum_step(x, u) -> np.ndarray:
    psi, psi_dot = float(x[0]), float(x[1])
    u = float(np.clip(np.asarray(u, dtype=np.float64).reshape(-1)[0], -PEND_MAX_TORQUE, PEND_MAX_TORQUE))
    psi_ddot = -3.0 * PEND_G / (2.0 * PEND_L) * np.sin(psi + np.pi) + 3.0 / (PEND_M * PEND_L**2) * u
    psi_next = wrap_angle(psi + psi_dot * PEND_DT)
    psi_dot_next = np.clip(psi_dot + psi_ddot * PEND_DT, -PEND_MAX_SPEED, PEND_MAX_SPEED)
    return np.array([psi_next, psi_dot_next])


def pendulum_reward(x, u) -> float:
    return float(-pendulum_cost(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64).reshape(1, -1))[0])


def pendulum_cost(x, u) -> np.ndarray:
    x, u = np.atleast_2d(x), np.atleast_2d(u)
    return x[:, 0] ** 2 + 0.1 * x[:, 1] ** 2 + 0.001 * u[:, 0] ** 2


def pendulum_cost_grad_u(x, u) -> np.ndarray:
    return 0.002 * np.atleast_2d(u)


# ---------------------------------------------------------------- surface vehicle

def vehicle_accel(v, tau) -> np.ndarray:
    """Body-frame acceleration ``M^-1 (tau - C(v) v - D v)`` with ``tau = [F_u, 0, tau_r]``."""
    u, vv, r = v
    f_u, tau_r = np.clip(np.asarray(tau, dtype=np.float64), -VEH_TAU_MAX, VEH_TAU_MAX)
    m = VEH_M
    coriolis = np.array([-m * vv * r, m * u * r, m * vv * u - m * u * vv])
    force = np.array([f_u, 0.0, tau_r]) - coriolis - np.array([VEH_DU * u, VEH_DV * vv, VEH_DR * r])
    return force / np.array([m, m, VEH_IZ])


def vehicle_step(p, v, tau, dt: float = VEH_DT) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler: velocities first, then the pose with the new velocities."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    v_next = v + dt * vehicle_accel(v, tau)
    c, s = np.cos(p[2]), np.sin(p[2])
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    p_next = p + dt * rot @ v_next
    p_next[2] = wrap_angle(p_next[2])
    return p_next, v_next


def vehicle_observe(p, v, prev_tau) -> np.ndarray:
    p, v = np.asarray(p, dtype=np.float64), np.asarray(v, dtype=np.float64)
    err = VEH_GOAL - p
    return np.concatenate([err, v, [np.cos(p[2]), np.sin(p[2])], np.asarray(prev_tau, dtype=np.float64)])


def vehicle_reward(p, v, tau) -> float:
    rel = np.concatenate([VEH_GOAL - np.asarray(p, dtype=np.float64), np.asarray(v, dtype=np.float64)])
    return float(-vehicle_cost(rel, np.asarray(tau, dtype=np.float64))[0])


def vehicle_cost(obs, tau) -> np.ndarray:
    """Stage cost from observation rows: pose error is ``obs[:3]``, velocity ``obs[3:6]``."""
    obs, tau = np.atleast_2d(obs), np.atleast_2d(tau)
    dist2 = np.sum(obs[:, :3] ** 2, axis=1)
    success = np.sqrt(dist2) < VEH_SUCCESS_RADIUS
    return 0.4 * dist2 + 0.03 * np.sum(obs[:, 3:6] ** 2, axis=1) + 0.0008 * np.sum(tau**2, axis=1) - VEH_SUCCESS_BONUS * success


def vehicle_cost_grad_u(obs, tau) -> np.ndarray:
    return 0.0016 * np.atleast_2d(tau)


# ---------------------------------------------------------------- LTI

def lti_step(x, u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64).reshape(1), -1.0, 1.0)
    return np.clip(LTI_A @ np.asarray(x, dtype=np.float64) + LTI_B @ u, -LTI_BOUND, LTI_BOUND)


def lti_reward(x, u) -> float:
    return float(-lti_cost(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64).reshape(1, -1))[0])


def lti_cost(x, u) -> np.ndarray:
    x, u = np.atleast_2d(x), np.atleast_2d(u)
    return np.sum((x - LTI_GOAL) ** 2, axis=1) + 0.001 * u[:, 0] ** 2


def lti_cost_grad_u(x, u) -> np.ndarray:
    return 0.002 * np.atleast_2d(u)


# ---------------------------------------------------------------- episodic wrappers

class Env:
    """Episodic wrapper; an episode runs steps ``t = 0..T`` and is done after ``t = T``."""

    spec: EnvSpec
    # observation components holding a wrapped angle
    angle_components: tuple[int, ...] = ()

    def __init__(self):
        self.t = 0
        self.state = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.t = 0
        self.state = rng.uniform(self.spec.init_lo, self.spec.init_hi)
        return self.observe()

    def set_state(self, state) -> np.ndarray:
        self.t = 0
        self.state = np.array(state, dtype=np.float64)
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def step(self, u) -> StepResult:
        u = np.clip(np.atleast_1d(np.asarray(u, dtype=np.float64)), self.spec.action_lo, self.spec.action_hi)
        reward = self._reward(u)
        self._advance(u)
        self.t += 1
        done = self.t > self.spec.horizon
        return StepResult(self.observe(), reward, -reward, done, self._success())

    def continuous_successor(self, obs, next_obs) -> np.ndarray:
        """``next_obs`` (one row or a row batch) with wrapped angles re-expressed next to ``obs``.

        The environment itself stays on [-pi, pi]; this only removes the 2 pi
        jumps from a recorded transition so that a smooth model can fit it.
        """
        obs = np.asarray(obs, dtype=np.float64)
        out = np.array(next_obs, dtype=np.float64)
        for i in self.angle_components:
            out[..., i] = obs[..., i] + wrap_angle(out[..., i] - obs[..., i])
        return out

    @staticmethod
    def cost(obs, u) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def cost_grad_u(obs, u) -> np.ndarray:
        raise NotImplementedError

    def final_error(self) -> float:
        raise NotImplementedError

    def _success(self) -> bool:
        return False


class PendulumEnv(Env):
    spec = EnvSpec(
        name="pendulum", state_dim=2, input_dim=1, obs_dim=2,
        action_lo=np.array([-PEND_MAX_TORQUE]), action_hi=np.array([PEND_MAX_TORQUE]),
        state_lo=np.array([-np.pi, -PEND_MAX_SPEED]), state_hi=np.array([np.pi, PEND_MAX_SPEED]),
        dt=PEND_DT, horizon=HORIZON,
        init_lo=np.array([-np.pi, -1.0]), init_hi=np.array([np.pi, 1.0]), goal=np.zeros(2),
    )
    angle_components = (0,)
    cost = staticmethod(pendulum_cost)
    cost_grad_u = staticmethod(pendulum_cost_grad_u)

    def _reward(self, u):
        return pendulum_reward(self.state, u)

    def _advance(self, u):
        self.state = pendulum_step(self.state, u)

    def final_error(self) -> float:
        return float(abs(self.state[0]))


class LtiEnv(Env):
    spec = EnvSpec(
        name="lti", state_dim=2, input_dim=1, obs_dim=2,
        action_lo=np.array([-1.0]), action_hi=np.array([1.0]),
        state_lo=np.full(2, -LTI_BOUND), state_hi=np.full(2, LTI_BOUND),
        dt=1.0, horizon=HORIZON,
        init_lo=np.full(2, -0.1), init_hi=np.full(2, 0.1), goal=LTI_GOAL.copy(),
    )
    cost = staticmethod(lti_cost)
    cost_grad_u = staticmethod(lti_cost_grad_u)

    def _reward(self, u):
        return lti_reward(self.state, u)

    def _advance(self, u):
        self.state = lti_step(self.state, u)

    def final_error(self) -> float:
        return float(np.linalg.norm(self.state - LTI_GOAL))


class VehicleEnv(Env):
    """State is ``[x, y, psi, u, v, r]``; observations are the 10-component goal-relative vector."""

    spec = EnvSpec(
        name="vehicle", state_dim=6, input_dim=2, obs_dim=10,
        action_lo=-VEH_TAU_MAX, action_hi=VEH_TAU_MAX,
        state_lo=np.full(6, -np.inf), state_hi=np.full(6, np.inf),
        dt=VEH_DT, horizon=HORIZON,
        init_lo=np.array([-0.2, -0.2, -np.pi / 20]), init_hi=np.array([0.2, 0.2, np.pi / 20]),
        goal=VEH_GOAL.copy(),
    )
    angle_components = (2,)
    cost = staticmethod(vehicle_cost)
    cost_grad_u = staticmethod(vehicle_cost_grad_u)

    def __init__(self, dt: float = VEH_DT):
        super().__init__()
        self.dt = dt
        self.prev_tau = np.zeros(2)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.t = 0
        self.state = np.concatenate([rng.uniform(self.spec.init_lo, self.spec.init_hi), np.zeros(3)])
        self.prev_tau = np.zeros(2)
        return self.observe()

    def set_state(self, state) -> np.ndarray:
        self.prev_tau = np.zeros(2)
        return super().set_state(state)

    def observe(self) -> np.ndarray:
        return vehicle_observe(self.state[:3], self.state[3:], self.prev_tau)

    def _reward(self, u):
        return vehicle_reward(self.state[:3], self.state[3:], u)

    def _advance(self, u):
        p, v = vehicle_step(self.state[:3], self.state[3:], u, self.dt)
        self.state = np.concatenate([p, v])
        self.prev_tau = u.copy()

    def _success(self) -> bool:
        return bool(np.linalg.norm(self.state[:3] - VEH_GOAL) < VEH_SUCCESS_RADIUS)

    def final_error(self) -> float:
        return float(np.linalg.norm(self.state[:3] - VEH_GOAL))


ENVIRONMENTS = {"pendulum": PendulumEnv, "vehicle": VehicleEnv, "lti": LtiEnv}


def make_env(task: str, **kw) -> Env:
    try:
        return ENVIRONMENTS[task](**kw)
    except KeyError:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(ENVIRONMENTS)}") from None
