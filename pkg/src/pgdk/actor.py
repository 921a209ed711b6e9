"""Deterministic bounded policy and its one-step model-based policy gradient."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .critic import Critic, value, value_input_grad
from .dko import DkoModel
from .nets import Mlp
from .numkit import AdamState, DimensionError, NonFiniteError, adam_step_inplace

CostFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Actor:
    def __init__(self, mu_net: Mlp):
        self.mu_net = mu_net

    @property
    def state_dim(self) -> int:
        return self.mu_net.spec.input_dim

    @property
    def input_dim(self) -> int:
        return self.mu_net.spec.output_dim


def act(actor: Actor, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != actor.state_dim:
        raise DimensionError(f"expected state width {actor.state_dim}, got {x.shape}")
    return actor.mu_net(x)


def _predict(dko: DkoModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    g = dko.lift_net(x)
    return (g @ dko.A.T + u @ dko.B.T) @ dko.C.T


def surrogate(actor: Actor, dko: DkoModel, critic: Critic, x: np.ndarray, cost_fn: CostFn) -> float:
    """One-step objective ``mean_i[c(x_i, mu(x_i)) + gamma V(x_hat_i+)]``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = actor.mu_net(x)
    x_hat = _predict(dko, x, u)
    return float(np.mean(cost_fn(x, u) + critic.gamma * value(critic, x_hat)))


def policy_gradient(actor: Actor, dko: DkoModel, critic: Critic, x: np.ndarray,
                    cost_fn: CostFn, cost_grad_u: CostFn) -> tuple[np.ndarray, float]:
    """Batch-mean gradient of the one-step objective w.r.t. the policy parameters.

    Actions are recomputed from the current policy rather than taken from the
    replay memory. The model enters only through ``x_hat+`` and the constant
    input Jacobian ``C B``. Returns ``(gradient, objective value)``.
    """
    if cost_grad_u is None:
        raise ValueError("policy gradient needs the analytic cost derivative d c / d u")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    N = x.shape[0]
    if N == 0:
        raise ValueError("policy gradient needs a non-empty batch")
    u, tape = actor.mu_net.forward(x)
    x_hat = _predict(dko, x, u)
    v_hat, dv_dx = value_input_grad(critic, x_hat)
    d_u = np.asarray(cost_grad_u(x, u), dtype=np.float64).reshape(u.shape)
    d_u = (d_u + critic.gamma * dv_dx @ dko.input_jacobian) / N
    if not np.all(np.isfinite(d_u)):
        raise NonFiniteError("non-finite action gradient in policy update")
    grad, _ = actor.mu_net.backward(tape, d_u)
    objective = float(np.mean(cost_fn(x, u) + critic.gamma * v_hat))
    return grad, objective


def update(actor: Actor, gradient: np.ndarray, adam: AdamState) -> AdamState:
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != actor.mu_net.params.shape:
        raise DimensionError(f"gradient length {gradient.shape} does not match the policy")
    adam_step_inplace(adam, actor.mu_net.params, gradient)
    return adam
