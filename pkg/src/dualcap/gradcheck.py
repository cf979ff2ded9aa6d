"""Finite-difference verification of every analytic gradient path.

Central differences (h = 1e-5) against the reverse-mode results for the
dense network, the batch-coupled renormalization, and the frozen-noise
channel chain. Used both by the test suite and the ``gradcheck`` CLI
subcommand.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .channels import ChannelSpec, channel_backward, channel_sample
from .ndt import NdtConfig, ndt_backward, ndt_generate, renormalize, renormalize_backward
from .rng import substream

H = 1e-5


def _flatten_params(params: nn.MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def _grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def mlp_param_fd(params: nn.MlpParams, x: np.ndarray, d_out: np.ndarray) -> float:
    """Relative error between analytic and central-difference parameter grads.

    The scalar objective is <d_out, forward(x)>.
    """
    grads, _ = nn.mlp_backward(params, nn.mlp_forward(params, x)[1], d_out)
    analytic = np.concatenate([a.ravel() for a in grads.weights + grads.biases])
    numeric = np.empty_like(analytic)
    idx = 0
    for arr in params.weights + params.biases:
        flat = arr.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + H
            up = float(np.sum(d_out * nn.mlp_forward(params, x)[0]))
            flat[k] = orig - H
            dn = float(np.sum(d_out * nn.mlp_forward(params, x)[0]))
            flat[k] = orig
            numeric[idx] = (up - dn) / (2.0 * H)
            idx += 1
    return _grad_rel_error(analytic, numeric)


def mlp_input_fd(params: nn.MlpParams, x: np.ndarray, d_out: np.ndarray) -> float:
    """Relative error of the input gradient against central differences."""
    _, dx = nn.mlp_backward(params, nn.mlp_forward(params, x)[1], d_out)
    numeric = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + H
            up = float(np.sum(d_out * nn.mlp_forward(params, x)[0]))
            x[i, j] = orig - H
            dn = float(np.sum(d_out * nn.mlp_forward(params, x)[0]))
            x[i, j] = orig
            numeric[i, j] = (up - dn) / (2.0 * H)
    return _grad_rel_error(dx, numeric)


def renormalize_fd(s: np.ndarray, spec: ChannelSpec, d_out: np.ndarray) -> float:
    """Check the renormalization backward pass, cross-sample terms included."""
    s = np.atleast_2d(np.asarray(s, dtype=float)).copy()
    _, divisor = renormalize(s, spec)
    analytic = renormalize_backward(s, divisor, spec, d_out)
    numeric = np.empty_like(s)
    for i in range(s.shape[0]):
        for j in range(s.shape[1]):
            orig = s[i, j]
            s[i, j] = orig + H
            up = float(np.sum(d_out * renormalize(s, spec)[0]))
            s[i, j] = orig - H
            dn = float(np.sum(d_out * renormalize(s, spec)[0]))
            s[i, j] = orig
            numeric[i, j] = (up - dn) / (2.0 * H)
    return _grad_rel_error(analytic, numeric)


def _replay_nlpn(spec: ChannelSpec, x: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Noise-frozen NLPN forward map (pure function of the input)."""
    state = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    alpha = spec.phase_constant
    for k in range(spec.nlpn_steps):
        u, v = state[:, 0].copy(), state[:, 1].copy()
        theta = alpha * (u * u + v * v)
        c, s = np.cos(theta), np.sin(theta)
        state[:, 0] = u * c - v * s + noise[k][:, 0]
        state[:, 1] = u * s + v * c + noise[k][:, 1]
    return state


def nlpn_input_fd(spec: ChannelSpec, x: np.ndarray, seed: int = 0) -> float:
    """Check the NLPN Jacobian-transpose against the frozen forward map."""
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    y, record = channel_sample(spec, x, substream(seed, "nlpn_fd"))
    rng = substream(seed, "nlpn_fd_dy")
    dy = rng.standard_normal(y.shape)
    analytic = channel_backward(spec, record, dy)
    numeric = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + H
            up = float(np.sum(dy * _replay_nlpn(spec, x, record.noise)))
            x[i, j] = orig - H
            dn = float(np.sum(dy * _replay_nlpn(spec, x, record.noise)))
            x[i, j] = orig
            numeric[i, j] = (up - dn) / (2.0 * H)
    return _grad_rel_error(analytic, numeric)


def nlpn_jvp(spec: ChannelSpec, record, v: np.ndarray) -> np.ndarray:
    """Exact forward-mode J*v through the frozen NLPN recursion."""
    alpha = spec.phase_constant
    du, dv = v[:, 0].copy(), v[:, 1].copy()
    for k in range(spec.nlpn_steps):
        u, w = record.states[k][:, 0], record.states[k][:, 1]
        theta = alpha * (u * u + w * w)
        c, s = np.cos(theta), np.sin(theta)
        fu = u * c - w * s
        fv = u * s + w * c
        dtheta = 2.0 * alpha * (u * du + w * dv)
        du, dv = (c * du - s * dv - dtheta * fv,
                  s * du + c * dv + dtheta * fu)
    return np.stack([du, dv], axis=1)


def nlpn_adjoint_gap(spec: ChannelSpec, batch_size: int = 16, seed: int = 0) -> float:
    """Dot-product (adjoint) test: <dy, J v> must equal <J^T dy, v>."""
    rng = substream(seed, "nlpn_adj")
    x = rng.uniform(-1.5, 1.5, size=(batch_size, 2))
    _, record = channel_sample(spec, x, substream(seed, "nlpn_adj_noise"))
    dy = rng.standard_normal((batch_size, 2))
    v = rng.standard_normal((batch_size, 2))
    jt_dy = channel_backward(spec, record, dy)
    jv = nlpn_jvp(spec, record, v)
    lhs = float(np.sum(dy * jv))
    rhs = float(np.sum(jt_dy * v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)


def ndt_chain_fd(ndt: NdtConfig, batch_size: int, seed: int = 0) -> float:
    """Full generator-to-reference chain check with frozen channel noise."""
    ref, tape = ndt_generate(ndt, batch_size, substream(seed, "ndt_fd"))
    rng = substream(seed, "ndt_fd_dref")
    d_ref = rng.standard_normal(ref.shape)
    grads = ndt_backward(ndt, tape, d_ref)
    analytic = np.concatenate([a.ravel() for a in grads.weights + grads.biases])

    def objective() -> float:
        s, _ = nn.mlp_forward(ndt.generator, tape.latents)
        if ndt.mode == "direct":
            return float(np.sum(d_ref * s))
        x = s
        if tape.divisor is not None:
            x, _ = renormalize(s, ndt.channel)
        if ndt.channel.family == "nlpn":
            y = _replay_nlpn(ndt.channel, x, tape.noise_record.noise)
        else:
            y = x + tape.noise_record.noise
        return float(np.sum(d_ref * y))

    numeric = np.empty_like(analytic)
    idx = 0
    for arr in ndt.generator.weights + ndt.generator.biases:
        flat = arr.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + H
            up = objective()
            flat[k] = orig - H
            dn = objective()
            flat[k] = orig
            numeric[idx] = (up - dn) / (2.0 * H)
            idx += 1
    return _grad_rel_error(analytic, numeric)


def run_all_checks(seed: int = 0):
    """(name, relative error, tolerance) for every gradient path."""
    rng = substream(seed, "gradcheck")
    results = []

    net = nn.init_mlp([2, 8, 1], "linear", seed, stream=("gc_mlp",))
    x = rng.standard_normal((4, 2))
    d_out = rng.standard_normal((4, 1))
    results.append(("mlp parameters [2,8,1]", mlp_param_fd(net, x, d_out), 1e-5))
    results.append(("mlp inputs [2,8,1]", mlp_input_fd(net, x, d_out), 1e-5))

    tanh_net = nn.init_mlp([3, 6, 2], "tanh", seed, stream=("gc_tanh",))
    xt = rng.standard_normal((5, 3))
    dt = rng.standard_normal((5, 2))
    results.append(("mlp parameters tanh output", mlp_param_fd(tanh_net, xt, dt), 1e-5))

    sig_net = nn.init_mlp([2, 6, 1], "sigmoid_scaled", seed, output_scale=2.5,
                          stream=("gc_sig",))
    results.append(("mlp parameters scaled sigmoid",
                    mlp_param_fd(sig_net, x, d_out), 1e-5))

    sq_spec = ChannelSpec("awgn_avg_power", 1.0, "square", 1.0)
    s = np.array([[1.0], [3.0]])
    results.append(("renormalization square cost",
                    renormalize_fd(s, sq_spec, np.array([[0.7], [-0.4]])), 1e-6))
    oi_spec = ChannelSpec("optical_intensity", 1.0, "identity", 1.0,
                          amplitude_limit=2.5)
    results.append(("renormalization identity cost",
                    renormalize_fd(np.array([[0.5], [1.5], [0.9]]), oi_spec,
                                   rng.standard_normal((3, 1))), 1e-6))

    nlpn1 = ChannelSpec("nlpn", 1e-6, "square_magnitude", 1.0, nlpn_steps=1,
                        nlpn_gamma=1.27, nlpn_distance=5000.0, nlpn_power_w=1e-4)
    results.append(("nlpn K=1 frozen-noise Jacobian",
                    nlpn_input_fd(nlpn1, np.array([[0.9, 0.0]]), seed), 1e-6))
    nlpn50 = ChannelSpec("nlpn", 7.4e-6, "square_magnitude", 1.0, nlpn_steps=50,
                         nlpn_gamma=1.27, nlpn_distance=5000.0, nlpn_power_w=1e-4)
    results.append(("nlpn K=50 adjoint consistency",
                    nlpn_adjoint_gap(nlpn50, seed=seed), 1e-9))

    gen = nn.init_mlp([4, 6, 1], "linear", seed, stream=("gc_gen",))
    awgn_ndt = NdtConfig("through_channel", 4, gen,
                         channel=ChannelSpec("awgn_avg_power", 0.5, "square", 1.0))
    results.append(("ndt chain awgn mode A", ndt_chain_fd(awgn_ndt, 6, seed), 1e-4))
    return results
