"""Minimal dense-network engine.

Fixed-topology fully-connected networks with ReLU hidden layers, exact
reverse-mode gradients, and Adam updates. Everything runs in float64 so
the finite-difference checks and the log-sum-exp terms downstream have
numerical headroom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream

OUTPUT_ACTIVATIONS = ("linear", "tanh", "sigmoid_scaled")


class DivergedError(RuntimeError):
    """Raised when an optimization step encounters non-finite numbers."""


@dataclass
class MlpParams:
    """Weights and biases of a fully-connected ReLU network.

    ``weights[k]`` has shape (layer_sizes[k+1], layer_sizes[k]);
    ``biases[k]`` has length layer_sizes[k+1]. The hidden activation is
    always ReLU; the output activation is one of ``linear``, ``tanh`` or
    ``sigmoid_scaled`` (a sigmoid scaled by ``output_scale``, mapping to
    (0, output_scale)).
    """

    layer_sizes: list
    weights: list
    biases: list
    output_activation: str = "linear"
    output_scale: float = 1.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
            self.output_scale,
        )


@dataclass
class MlpGrads:
    """Parameter gradients, shaped like the matching MlpParams."""

    weights: list
    biases: list


@dataclass
class ForwardTape:
    """Per-layer intermediates recorded by mlp_forward for the backward pass."""

    inputs: np.ndarray
    pre_activations: list
    post_activations: list


@dataclass
class AdamState:
    """Adam first/second moments, one pair of arrays per parameter tensor."""

    m_weights: list
    m_biases: list
    v_weights: list
    v_biases: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_mlp(layer_sizes, output_activation="linear", seed=0, output_scale=1.0,
             stream=("mlp_init",)) -> MlpParams:
    """Initialize a network with uniform fan-in/fan-out scaled weights.

    Weights are drawn from U(-b, b) with b = sqrt(6 / (fan_in + fan_out));
    biases start at zero. The same (seed, stream) always yields
    bit-identical parameters.
    """
    layer_sizes = [int(n) for n in layer_sizes]
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(n < 1 for n in layer_sizes):
        raise ValueError("layer sizes must be positive")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    rng = substream(seed, *stream)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_sizes, weights, biases, output_activation, float(output_scale))


def _apply_output_activation(params: MlpParams, z: np.ndarray) -> np.ndarray:
    if params.output_activation == "linear":
        return z
    if params.output_activation == "tanh":
        return np.tanh(z)
    # sigmoid scaled to (0, A); computed via expit-style stable form
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return params.output_scale * out


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Evaluate the network on a batch (rows = samples).

    Returns (output_batch, ForwardTape); the tape holds everything
    mlp_backward needs.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(
            f"input batch must be (B, {params.in_dim}), got {x.shape}")
    pre, post = [], []
    a = x
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        if k < last:
            a = np.maximum(z, 0.0)
        else:
            a = _apply_output_activation(params, z)
        post.append(a)
    return a, ForwardTape(x, pre, post)


def mlp_backward(params: MlpParams, tape: ForwardTape, d_out: np.ndarray):
    """Exact reverse-mode gradients of the recorded forward pass.

    Returns (MlpGrads, d_input). ReLU subgradient at exactly 0 is 0.
    """
    d_out = np.asarray(d_out, dtype=float)
    out = tape.post_activations[-1]
    if d_out.shape != out.shape:
        raise ValueError(
            f"output gradient must be {out.shape}, got {d_out.shape}")
    if len(tape.pre_activations) != params.n_layers:
        raise ValueError("tape does not match parameter set")

    # output-activation derivative
    if params.output_activation == "linear":
        dz = d_out
    elif params.output_activation == "tanh":
        dz = d_out * (1.0 - out ** 2)
    else:  # sigmoid_scaled: d/dz [A*s(z)] = out * (1 - out/A)
        dz = d_out * out * (1.0 - out / params.output_scale)

    d_weights = [None] * params.n_layers
    d_biases = [None] * params.n_layers
    for k in range(params.n_layers - 1, -1, -1):
        a_prev = tape.inputs if k == 0 else tape.post_activations[k - 1]
        d_weights[k] = dz.T @ a_prev
        d_biases[k] = dz.sum(axis=0)
        da = dz @ params.weights[k]
        if k > 0:
            dz = da * (tape.pre_activations[k - 1] > 0)
    return MlpGrads(d_weights, d_biases), da


def init_adam(params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        0, beta1, beta2, eps,
    )


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState,
              learning_rate: float):
    """One Adam update with bias correction; mutates params/state in place.

    Raises DivergedError on non-finite gradient entries (the step is
    rejected and no state is modified).
    """
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise DivergedError("non-finite gradient entries")
    state.step_count += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(
            params.weights + params.biases,
            grads.weights + grads.biases,
            state.m_weights + state.m_biases,
            state.v_weights + state.v_biases):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def save_params(path, params: MlpParams) -> None:
    """Dump parameters to an .npz file; round trip is bit-exact."""
    arrays = {f"w{k}": w for k, w in enumerate(params.weights)}
    arrays.update({f"b{k}": b for k, b in enumerate(params.biases)})
    np.savez(
        path,
        layer_sizes=np.asarray(params.layer_sizes, dtype=np.int64),
        output_activation=np.str_(params.output_activation),
        output_scale=np.float64(params.output_scale),
        **arrays,
    )


def load_params(path) -> MlpParams:
    with np.load(path) as data:
        sizes = [int(n) for n in data["layer_sizes"]]
        n = len(sizes) - 1
        return MlpParams(
            sizes,
            [data[f"w{k}"] for k in range(n)],
            [data[f"b{k}"] for k in range(n)],
            str(data["output_activation"]),
            float(data["output_scale"]),
        )


def params_digest(params: MlpParams) -> str:
    """Content hash of the parameter set (for run manifests)."""
    import hashlib

    h = hashlib.sha256()
    h.update(repr(params.layer_sizes).encode())
    h.update(params.output_activation.encode())
    h.update(np.float64(params.output_scale).tobytes())
    for arr in params.weights + params.biases:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
