import numpy as np
import pytest

from pgdk.actor import Actor, act, policy_gradient, surrogate, update
from pgdk.critic import Critic
from pgdk.dko import DkoModel
from pgdk.envs import pendulum_cost, pendulum_cost_grad_u
from pgdk.nets import Mlp, MlpSpec, init
from pgdk.numkit import AdamState, DimensionError, finite_difference_grad, make_rng


def quad_cost(x, u):
    return np.sum(x**2, axis=1) + 0.5 * np.sum(u**2, axis=1)


def quad_cost_grad(x, u):
    return 1.0 * u


def random_instance(seed, n=2, m=1, r=4, N=6):
    rng = make_rng(seed, 3)
    box = (tuple([-2.0] * m), tuple([2.0] * m))
    actor = Actor(init(MlpSpec(n, ((6, "relu"), (m, "tanh")), output_scale=box), rng))
    dko = DkoModel.create(MlpSpec(n, ((5, "tanh"), (r, "linear"))), m, rng)
    dko.set_matrices(0.5 * rng.standard_normal((r, r)), rng.standard_normal((r, m)), rng.standard_normal((n, r)))
    critic = Critic(init(MlpSpec(n, ((6, "tanh"), (1, "linear"))), rng), 0.95)
    return actor, dko, critic, rng.standard_normal((N, n))


def test_zero_net_outputs_box_center():
    actor = Actor(Mlp(MlpSpec(2, ((4, "relu"), (2, "tanh")), output_scale=((-2.0, 0.0), (2.0, 4.0)))))
    assert np.array_equal(act(actor, np.array([0.3, 1.0])), [0.0, 2.0])


def test_pendulum_actor_in_box():
    rng = make_rng(0, 3)
    actor = Actor(init(MlpSpec(2, ((400, "relu"), (300, "relu"), (1, "tanh")), output_scale=((-2.0,), (2.0,))), rng))
    actor.mu_net.params = actor.mu_net.params * 50
    u = act(actor, rng.uniform(-50, 50, (2000, 2)))
    assert np.all(np.abs(u) <= 2.0)


def test_act_deterministic_and_checked():
    actor, _, _, x = random_instance(1)
    assert np.array_equal(act(actor, x), act(actor, x))
    with pytest.raises(DimensionError):
        act(actor, np.zeros(5))


def test_zero_gradient_when_cost_and_value_flat():
    actor, dko, _, x = random_instance(2)
    critic = Critic(Mlp(MlpSpec(2, ((3, "relu"), (1, "linear")))))
    zero = lambda a, b: np.zeros(a.shape[0])
    grad, _ = policy_gradient(actor, dko, critic, x, zero, lambda a, b: np.zeros_like(b))
    assert np.array_equal(grad, np.zeros_like(grad))


def test_scalar_hand_chain_rule():
    # g = identity, A = B = C = 1, V(x) = x, c = u^2, mu(x) = theta x, gamma = 0.5, x = 2, theta = 1
    lift = Mlp(MlpSpec(1, ((1, "linear"),)), np.array([1.0, 0.0]))
    dko = DkoModel(lift, 1)
    dko.set_matrices([[1.0]], [[1.0]], [[1.0]])
    critic = Critic(Mlp(MlpSpec(1, ((1, "linear"),)), np.array([1.0, 0.0])), 0.5)
    actor = Actor(Mlp(MlpSpec(1, ((1, "linear"),)), np.array([1.0, 0.0])))
    grad, objective = policy_gradient(actor, dko, critic, np.array([[2.0]]),
                                      lambda x, u: u[:, 0] ** 2, lambda x, u: 2 * u)
    assert grad[0] == pytest.approx(9.0, abs=1e-12)
    assert grad[1] == pytest.approx(4.5, abs=1e-12)  # bias: 2u + gamma
    assert objective == pytest.approx(4.0 + 0.5 * 4.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_surrogate_finite_difference(seed):
    actor, dko, critic, x = random_instance(seed, m=1 + seed % 2)
    grad, obj = policy_gradient(actor, dko, critic, x, quad_cost, quad_cost_grad)
    spec = actor.mu_net.spec
    assert obj == pytest.approx(surrogate(actor, dko, critic, x, quad_cost), rel=1e-12)
    num = finite_difference_grad(lambda p: surrogate(Actor(Mlp(spec, p)), dko, critic, x, quad_cost),
                                 actor.mu_net.params.copy(), 1e-6)
    assert np.max(np.abs(grad - num)) <= 1e-4 * np.max(np.abs(num))


def test_gradient_is_a_batch_mean():
    actor, dko, critic, x = random_instance(7)
    g1, _ = policy_gradient(actor, dko, critic, x, quad_cost, quad_cost_grad)
    g2, _ = policy_gradient(actor, dko, critic, np.vstack([x, x]), quad_cost, quad_cost_grad)
    g3, _ = policy_gradient(actor, dko, critic, x[::-1], quad_cost, quad_cost_grad)
    assert np.allclose(g1, g2, rtol=0, atol=1e-12)
    assert np.allclose(g1, g3, rtol=0, atol=1e-12)


def test_missing_cost_derivative():
    actor, dko, critic, x = random_instance(8)
    with pytest.raises(ValueError):
        policy_gradient(actor, dko, critic, x, quad_cost, None)


def test_update_zero_gradient_and_zero_rate():
    actor, _, _, _ = random_instance(9)
    before = actor.mu_net.params.copy()
    update(actor, np.zeros_like(before), AdamState.zeros(before.size, 0.1))
    update(actor, np.ones_like(before), AdamState.zeros(before.size, 0.0))
    assert np.array_equal(actor.mu_net.params, before)
    with pytest.raises(DimensionError):
        update(actor, np.zeros(3), AdamState.zeros(3, 0.1))


def test_descent_on_frozen_model():
    actor, dko, critic, x = random_instance(10, N=8)
    adam = AdamState.zeros(actor.mu_net.params.size, 1e-4)
    start = surrogate(actor, dko, critic, x, pendulum_cost)
    prev = start
    for _ in range(100):
        grad, _ = policy_gradient(actor, dko, critic, x, pendulum_cost, pendulum_cost_grad_u)
        adam = update(actor, grad, adam)
        now = surrogate(actor, dko, critic, x, pendulum_cost)
        assert now <= prev + 1e-10
        prev = now
        assert np.all(np.abs(act(actor, x)) <= 2.0)
    assert prev < start
