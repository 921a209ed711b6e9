import numpy as np
import pytest

from pgdk.nets import (ACTIVATIONS, Activation, Mlp, MlpSpec, init, load_params, save_params)
from pgdk.numkit import DimensionError, NonFiniteError, finite_difference_grad, make_rng


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def test_linear_1x1_forward():
    spec = MlpSpec(1, ((1, "linear"),))
    net = Mlp(spec, np.array([2.0, 1.0]))
    assert net(np.array([3.0]))[0] == 7.0


def test_relu_hidden_layer_zeroes_negative_units():
    spec = MlpSpec(2, ((2, "relu"), (1, "linear")))
    net = Mlp(spec)
    net.weights[0][:] = np.eye(2)
    net.weights[1][:] = [[1.0], [1.0]]
    assert net(np.array([1.0, -1.0]))[0] == 1.0


def test_zero_params_give_zero_output():
    net = Mlp(MlpSpec(3, ((5, "relu"), (4, "tanh"), (2, "linear"))))
    assert np.array_equal(net(np.ones((7, 3))), np.zeros((7, 2)))


def test_bounded_tanh_output_center():
    spec = MlpSpec(2, ((1, "tanh"),), output_scale=((-2.0,), (2.0,)))
    assert Mlp(spec)(np.array([0.3, -0.1]))[0] == 0.0
    big = Mlp(spec, np.array([100.0, 100.0, 0.0]))
    y = big(np.array([[50.0, 50.0], [-50.0, -50.0]]))
    assert np.all(np.abs(y) <= 2.0)


def test_wrong_input_width():
    net = Mlp(MlpSpec(2, ((1, "linear"),)))
    with pytest.raises(DimensionError):
        net(np.zeros(3))


@pytest.mark.parametrize("kind", ["linear", "relu", "leaky_relu(0.1)", "tanh", "silu", "gelu"])
def test_activation_derivative_matches_finite_difference(kind):
    act = Activation.parse(kind)
    z = np.linspace(-3.0, 3.0, 41) + 0.0123  # stay off the ReLU kink
    num = (act(z + 1e-6) - act(z - 1e-6)) / 2e-6
    assert np.allclose(act.derivative(z), num, atol=1e-7)


def test_activation_parse_round_trip():
    for kind in ACTIVATIONS:
        a = Activation(kind)
        assert Activation.parse(a.to_str()) == a
    assert Activation.parse("LeakyReLU(0.2)") == Activation("leaky_relu", 0.2)
    with pytest.raises(ValueError):
        Activation("swish")


@pytest.mark.parametrize("kind", ["relu", "leaky_relu", "tanh", "silu", "gelu", "linear"])
def test_gradient_fidelity(kind):
    """Analytic parameter and input gradients agree with central differences (20 draws)."""
    rng = make_rng(7, hash(kind) % 1000)
    for trial in range(20):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        spec = MlpSpec(n, ((int(rng.integers(2, 6)), Activation(kind)), (int(rng.integers(2, 5)), Activation(kind)), (m, "linear")))
        net = init(spec, rng)
        net.params = net.params + 0.1 * rng.standard_normal(spec.n_params)
        x = rng.standard_normal((3, n))
        w = rng.standard_normal((3, m))
        y, tape = net.forward(x)
        g_p, g_x = net.backward(tape, w)

        def loss_p(p):
            return float(np.sum(Mlp(spec, p)(x) * w))

        def loss_x(flat):
            return float(np.sum(net(flat.reshape(x.shape)) * w))

        assert rel_err(g_p, finite_difference_grad(loss_p, net.params.copy(), 1e-5)) <= 1e-4, trial
        assert rel_err(g_x.ravel(), finite_difference_grad(loss_x, x.ravel().copy(), 1e-5)) <= 1e-4, trial


def test_gradient_with_output_scale():
    rng = make_rng(1, 0)
    spec = MlpSpec(3, ((6, "relu"), (2, "tanh")), output_scale=((-2.0, -1.0), (2.0, 3.0)))
    net = init(spec, rng)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 2))
    g, _ = net.backward(net.forward(x)[1], w)
    num = finite_difference_grad(lambda p: float(np.sum(Mlp(spec, p)(x) * w)), net.params.copy())
    assert rel_err(g, num) <= 1e-4


def test_single_row_matches_batch():
    rng = make_rng(2, 0)
    net = init(MlpSpec(3, ((8, "gelu"), (2, "linear"))), rng)
    x = rng.standard_normal((5, 3))
    batch = net(x)
    for i in range(5):
        assert np.allclose(net(x[i]), batch[i], rtol=0, atol=1e-14)


def test_backward_rejects_foreign_tape():
    a = Mlp(MlpSpec(2, ((3, "relu"), (1, "linear"))))
    b = Mlp(MlpSpec(2, ((4, "relu"), (1, "linear"))))
    _, tape = a.forward(np.zeros(2))
    with pytest.raises(DimensionError):
        b.backward(tape, np.ones(1))


def test_init_fan_in_bounds():
    net = init(MlpSpec(400, ((300, "relu"), (1, "linear"))), make_rng(0, 1))
    assert np.max(np.abs(net.weights[0])) <= 1 / 20
    assert np.all(net.biases[0] == 0)


def test_params_setter_rejects_nan():
    net = Mlp(MlpSpec(1, ((1, "linear"),)))
    with pytest.raises(NonFiniteError):
        net.params = np.array([np.nan, 0.0])


def test_spec_string_and_dict_round_trip():
    spec = MlpSpec.from_string(3, "relu:400,silu:300,tanh:2", output_scale=((-1, -2), (1, 2)))
    assert spec.output_dim == 2
    assert spec.n_params == 3 * 400 + 400 + 400 * 300 + 300 + 300 * 2 + 2
    assert MlpSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        MlpSpec.from_string(3, "relu:4,linear:1", output_scale=((-1,), (1,)))


def test_binary_round_trip(tmp_path):
    spec = MlpSpec(3, ((5, "leaky_relu(0.05)"), (2, "tanh")), output_scale=((-1.0, -2.0), (1.0, 2.0)))
    net = init(spec, make_rng(9, 9))
    path = tmp_path / "net.bin"
    save_params(net, path)
    back = load_params(path, spec)
    assert back.spec == spec
    assert np.array_equal(back.params, net.params)
    with pytest.raises(DimensionError):
        load_params(path, MlpSpec(3, ((5, "relu"), (2, "tanh"))))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_params(path)
