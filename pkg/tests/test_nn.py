import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcap import nn
from dualcap.gradcheck import mlp_param_fd


def test_init_shapes_and_zero_biases():
    params = nn.init_mlp([2, 100, 100, 1], "linear", seed=7)
    assert params.layer_sizes == [2, 100, 100, 1]
    assert [w.shape for w in params.weights] == [(100, 2), (100, 100), (1, 100)]
    for b in params.biases:
        assert np.all(b == 0.0)
    assert all(np.all(np.isfinite(w)) for w in params.weights)


def test_init_single_weight_bound():
    # fan_in = fan_out = 1 -> bound sqrt(3)
    for seed in range(20):
        params = nn.init_mlp([1, 1], "linear", seed=seed)
        w = params.weights[0][0, 0]
        assert -np.sqrt(3.0) <= w <= np.sqrt(3.0)
        assert params.biases[0][0] == 0.0


def test_init_deterministic(tmp_path):
    a = nn.init_mlp([2, 100, 100, 1], "linear", seed=7)
    b = nn.init_mlp([2, 100, 100, 1], "linear", seed=7)
    nn.save_params(tmp_path / "a.npz", a)
    nn.save_params(tmp_path / "b.npz", b)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    c = nn.init_mlp([2, 100, 100, 1], "linear", seed=8)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_rejects_bad_layers():
    with pytest.raises(ValueError):
        nn.init_mlp([3], "linear", seed=0)
    with pytest.raises(ValueError):
        nn.init_mlp([2, 0, 1], "linear", seed=0)


def test_forward_identity_linear_layer():
    params = nn.MlpParams([2, 2], [np.eye(2)], [np.zeros(2)])
    out, _ = nn.mlp_forward(params, [[3.5, -2.0]])
    assert np.array_equal(out, [[3.5, -2.0]])


def test_forward_inactive_relu():
    params = nn.MlpParams([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])],
                          [np.zeros(1), np.zeros(1)])
    out, _ = nn.mlp_forward(params, [[-5.0]])
    assert out[0, 0] == 0.0


def test_forward_hand_evaluated_network():
    params = nn.MlpParams([1, 2, 1],
                          [np.array([[1.0], [-1.0]]), np.array([[2.0, 3.0]])],
                          [np.zeros(2), np.array([1.0])])
    out, tape = nn.mlp_forward(params, [[2.0]])
    assert np.array_equal(tape.post_activations[0], [[2.0, 0.0]])
    assert out[0, 0] == 5.0


def test_forward_rejects_dimension_mismatch():
    params = nn.init_mlp([3, 4, 1], "linear", seed=0)
    with pytest.raises(ValueError):
        nn.mlp_forward(params, np.zeros((5, 2)))


def test_backward_linear_layer_formulas():
    w = np.array([[1.5, -0.5], [2.0, 0.25]])
    params = nn.MlpParams([2, 2], [w.copy()], [np.zeros(2)])
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    g = np.array([[0.5, -1.0], [2.0, 0.0]])
    _, tape = nn.mlp_forward(params, x)
    grads, dx = nn.mlp_backward(params, tape, g)
    assert np.allclose(grads.weights[0], g.T @ x)
    assert np.allclose(grads.biases[0], g.sum(axis=0))
    assert np.allclose(dx, g @ w)


def test_backward_inactive_relu_zero_gradient():
    params = nn.MlpParams([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])],
                          [np.zeros(1), np.zeros(1)])
    _, tape = nn.mlp_forward(params, [[-5.0]])
    grads, dx = nn.mlp_backward(params, tape, [[1.0]])
    assert grads.weights[0][0, 0] == 0.0
    assert dx[0, 0] == 0.0


@pytest.mark.parametrize("sizes,out_act", [
    ([2, 8, 1], "linear"),
    ([2, 100, 100, 1], "linear"),     # statistics network, scalar channels
    ([4, 150, 150, 1], "linear"),     # statistics network, complex channel
    ([5, 10, 1], "tanh"),
])
def test_backward_matches_finite_differences(sizes, out_act):
    rng = np.random.default_rng(11)
    params = nn.init_mlp(sizes, out_act, seed=3)
    x = rng.standard_normal((4, sizes[0]))
    d_out = rng.standard_normal((4, sizes[-1]))
    assert mlp_param_fd(params, x, d_out) < 1e-4


def test_adam_zero_gradient_keeps_parameters():
    params = nn.init_mlp([2, 3, 1], "linear", seed=0)
    before = params.copy()
    grads = nn.MlpGrads([np.zeros_like(w) for w in params.weights],
                        [np.zeros_like(b) for b in params.biases])
    state = nn.init_adam(params)
    nn.adam_step(params, grads, state, 1e-3)
    assert state.step_count == 1
    for w0, w1 in zip(before.weights, params.weights):
        assert np.array_equal(w0, w1)


def test_adam_first_step_is_signed_learning_rate():
    params = nn.MlpParams([1, 1], [np.array([[0.0]])], [np.zeros(1)])
    grads = nn.MlpGrads([np.array([[4.0]])], [np.zeros(1)])
    state = nn.init_adam(params)
    nn.adam_step(params, grads, state, 1e-3)
    # bias-corrected first step reduces to -lr * g/|g| up to eps
    assert params.weights[0][0, 0] == pytest.approx(-1e-3, abs=1e-9)


def test_adam_constant_gradient_descends_monotonically():
    params = nn.MlpParams([1, 1], [np.array([[0.0]])], [np.zeros(1)])
    grads = nn.MlpGrads([np.array([[1.0]])], [np.zeros(1)])
    state = nn.init_adam(params)
    values = []
    for _ in range(100):
        nn.adam_step(params, grads, state, 1e-3)
        values.append(params.weights[0][0, 0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_rejects_non_finite_gradients():
    params = nn.init_mlp([1, 1], "linear", seed=0)
    grads = nn.MlpGrads([np.array([[np.nan]])], [np.zeros(1)])
    state = nn.init_adam(params)
    with pytest.raises(nn.DivergedError):
        nn.adam_step(params, grads, state, 1e-3)
    assert state.step_count == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_activation_ranges(value):
    tanh_net = nn.MlpParams([1, 1], [np.array([[1.0]])], [np.zeros(1)], "tanh")
    out, _ = nn.mlp_forward(tanh_net, [[value]])
    assert -1.0 <= out[0, 0] <= 1.0
    sig_net = nn.MlpParams([1, 1], [np.array([[1.0]])], [np.zeros(1)],
                           "sigmoid_scaled", 2.5)
    out, _ = nn.mlp_forward(sig_net, [[value]])
    assert 0.0 <= out[0, 0] <= 2.5
    assert np.isfinite(out[0, 0])


def test_save_load_round_trip_bit_exact(tmp_path):
    params = nn.init_mlp([3, 7, 2], "sigmoid_scaled", seed=5, output_scale=2.5)
    nn.save_params(tmp_path / "p.npz", params)
    loaded = nn.load_params(tmp_path / "p.npz")
    assert loaded.layer_sizes == params.layer_sizes
    assert loaded.output_activation == params.output_activation
    assert loaded.output_scale == params.output_scale
    for a, b in zip(params.weights + params.biases,
                    loaded.weights + loaded.biases):
        assert np.array_equal(a, b)
    assert nn.params_digest(loaded) == nn.params_digest(params)


def test_tape_replay_reproduces_output():
    params = nn.init_mlp([2, 5, 1], "linear", seed=1)
    x = np.random.default_rng(0).standard_normal((8, 2))
    out1, tape = nn.mlp_forward(params, x)
    out2, _ = nn.mlp_forward(params, tape.inputs)
    assert np.array_equal(out1, out2)
