"""State-value critic trained by mini-batch temporal-difference descent."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .nets import Mlp
from .numkit import AdamState, DimensionError, NonFiniteError, adam_step_inplace

CostFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Critic:
    """V(x) = value_scale * v_net(x).

    A large ``value_scale`` (about 1/(1 - gamma) times the typical stage cost)
    lets the network work with outputs of order one when returns are large.
    """

    def __init__(self, v_net: Mlp, gamma: float = 0.99, semi_gradient: bool = True, value_scale: float = 1.0):
        if v_net.spec.output_dim != 1:
            raise DimensionError("critic network must have a scalar output")
        if not 0.0 <= gamma < 1.0:
            raise ValueError("discount factor must lie in [0, 1)")
        if not value_scale > 0.0:
            raise ValueError("value_scale must be positive")
        self.v_net = v_net
        self.gamma = gamma
        self.value_scale = float(value_scale)
        self.semi_gradient = semi_gradient

    @property
    def state_dim(self) -> int:
        return self.v_net.spec.input_dim


def value(critic: Critic, x: np.ndarray) -> np.ndarray | float:
    """V(x) for one state, or a vector of values for a row batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != critic.state_dim:
        raise DimensionError(f"expected state width {critic.state_dim}, got {x.shape}")
    y = critic.value_scale * critic.v_net(x)
    return float(y[0]) if x.ndim == 1 else y[:, 0]


def value_input_grad(critic: Critic, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and dV/dx for a row batch of states."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y, tape = critic.v_net.forward(x)
    s = critic.value_scale
    _, dx = critic.v_net.backward(tape, np.full_like(y, s), need_params=False)
    return s * y[:, 0], dx


def _td_errors(critic: Critic, x, u, x_next, cost_fn: CostFn):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("TD loss needs a non-empty batch")
    c = np.asarray(cost_fn(x, np.atleast_2d(u)), dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise NonFiniteError("non-finite stage cost")
    N = x.shape[0]
    if critic.semi_gradient:
        # only V(x) needs a tape when the bootstrap target is frozen
        v, tape = critic.v_net.forward(x)
        v, v_next = v[:, 0], critic.v_net(x_next)[:, 0]
    else:
        both, tape = critic.v_net.forward(np.vstack([x, x_next]))
        v, v_next = both[:N, 0], both[N:, 0]
    s = critic.value_scale
    v, v_next = s * v, s * v_next
    delta = c + critic.gamma * v_next - v
    return delta, tape


def td_loss(critic: Critic, x, u, x_next, cost_fn: CostFn) -> float:
    """``sum(delta^2) / (2N)`` with ``delta = c(x,u) + gamma V(x+) - V(x)``."""
    delta, _ = _td_errors(critic, x, u, x_next, cost_fn)
    return float(np.sum(delta**2) / (2.0 * delta.size))


def td_loss_grad(critic: Critic, x, u, x_next, cost_fn: CostFn) -> tuple[float, np.ndarray]:
    """TD loss and its gradient; the bootstrap term is held constant when ``semi_gradient``."""
    delta, tape = _td_errors(critic, x, u, x_next, cost_fn)
    N, s = delta.size, critic.value_scale
    if critic.semi_gradient:
        d_out = (-s * delta / N)[:, None]
    else:
        d_out = s * np.concatenate([-delta, critic.gamma * delta])[:, None] / N
    grad, _ = critic.v_net.backward(tape, d_out)
    return float(np.sum(delta**2) / (2.0 * N)), grad


def update(critic: Critic, x, u, x_next, cost_fn: CostFn, adam: AdamState) -> tuple[AdamState, float]:
    loss, grad = td_loss_grad(critic, x, u, x_next, cost_fn)
    adam_step_inplace(adam, critic.v_net.params, grad)
    return adam, loss
