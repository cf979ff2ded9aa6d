"""Neural distribution transformer: reference-sample generation.

Mode ``through_channel`` maps latent Gaussian noise through the
generator network, renormalizes the batch to meet the average cost
constraint with equality, and transmits the result over the channel.
Mode ``direct`` emits generator outputs as reference samples without any
post-processing (usable when the channel is a black box, but the samples
are not guaranteed to be realizable channel outputs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .channels import ChannelSpec, NoiseRecord, channel_backward, channel_sample

MODES = ("through_channel", "direct")


@dataclass
class NdtConfig:
    mode: str
    latent_dim: int
    generator: nn.MlpParams
    channel: ChannelSpec = None
    renormalize: bool = True   # skipped for amplitude-only constraints

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown NDT mode {self.mode!r}")
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        if self.generator.in_dim != self.latent_dim:
            raise ValueError("generator input width must equal the latent dimension")
        if self.mode == "through_channel" and self.channel is None:
            raise ValueError("through-channel mode needs a channel spec")


def sample_latent(batch_size: int, latent_dim: int,
                  rng: np.random.Generator) -> np.ndarray:
    """B x l standard normal latent draws."""
    if batch_size < 1 or latent_dim < 1:
        raise ValueError("batch size and latent dimension must be positive")
    return rng.standard_normal((batch_size, latent_dim))


def _divisor(spec: ChannelSpec, s: np.ndarray, constraint: float) -> float:
    from .channels import channel_cost, cost_inverse

    mean_cost = float(np.mean(channel_cost(spec, s)))
    if mean_cost <= 0:
        raise ValueError("degenerate generator output: zero batch mean cost")
    return float(cost_inverse(spec, mean_cost / constraint))


def renormalize(s_batch: np.ndarray, spec: ChannelSpec,
                constraint: float = None):
    """Scale a batch so its mean cost equals the constraint level exactly.

    Returns (scaled_batch, divisor). Relies on the cost distributing over
    division (true for square, identity and squared-magnitude costs).
    """
    s = np.atleast_2d(np.asarray(s_batch, dtype=float))
    p = spec.constraint_level if constraint is None else constraint
    d = _divisor(spec, s, p)
    return s / d, d


def renormalize_backward(s_batch: np.ndarray, divisor: float,
                         spec: ChannelSpec, d_out: np.ndarray,
                         constraint: float = None) -> np.ndarray:
    """Backward pass of renormalize; includes the cross-sample coupling.

    With s~ = s / d(s) and d depending on the whole batch:
    ds_k = d_out_k / d  -  (sum_i <d_out_i, s_i> / d^2) * grad_k d.
    """
    s = np.atleast_2d(np.asarray(s_batch, dtype=float))
    g = np.atleast_2d(np.asarray(d_out, dtype=float))
    p = spec.constraint_level if constraint is None else constraint
    b = s.shape[0]
    inner = float(np.sum(g * s))
    if spec.cost_tag == "identity":
        dd = np.full_like(s, 1.0 / (b * p))
    elif spec.cost_tag in ("square", "square_magnitude"):
        dd = s / (b * p * divisor)
    else:
        raise ValueError(f"cost tag {spec.cost_tag!r} is not renormalizable")
    return g / divisor - (inner / divisor ** 2) * dd


@dataclass
class NdtTape:
    """Everything needed to backpropagate through one generated batch."""

    latents: np.ndarray
    generator_tape: nn.ForwardTape
    raw_outputs: np.ndarray
    divisor: float = None          # None when renormalization was skipped
    noise_record: NoiseRecord = None


def ndt_generate(ndt: NdtConfig, batch_size: int, rng: np.random.Generator):
    """Draw one batch of reference samples; returns (ref_batch, NdtTape)."""
    z = sample_latent(batch_size, ndt.latent_dim, rng)
    s, gen_tape = nn.mlp_forward(ndt.generator, z)
    if ndt.mode == "direct":
        return s, NdtTape(z, gen_tape, s)
    divisor = None
    x = s
    if ndt.renormalize:
        x, divisor = renormalize(s, ndt.channel)
    y, record = channel_sample(ndt.channel, x, rng, validate=False)
    return y, NdtTape(z, gen_tape, s, divisor, record)


def ndt_backward(ndt: NdtConfig, tape: NdtTape,
                 d_ref: np.ndarray) -> nn.MlpGrads:
    """Gradients of a scalar loss w.r.t. the generator parameters.

    ``d_ref`` is the loss gradient at the generated reference samples.
    Through-channel mode chains the frozen-noise channel Jacobian and the
    batch-coupled renormalization quotient rule before the generator.
    """
    d = np.atleast_2d(np.asarray(d_ref, dtype=float))
    if ndt.mode == "through_channel":
        if tape.noise_record is None:
            raise ValueError("tape was not produced in through-channel mode")
        d = channel_backward(ndt.channel, tape.noise_record, d)
        if tape.divisor is not None:
            d = renormalize_backward(tape.raw_outputs, tape.divisor,
                                     ndt.channel, d)
    grads, _ = nn.mlp_backward(ndt.generator, tape.generator_tape, d)
    return grads
