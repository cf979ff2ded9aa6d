"""Memoryless channel simulators.

Four families: average-power AWGN, amplitude-limited AWGN, optical
intensity (OI), and the zero-dispersion nonlinear phase-noise (NLPN)
fiber channel. Each simulator records its noise realization so the
frozen forward map can be replayed and differentiated exactly.

Complex values are carried as 2-column real rows throughout. The NLPN
simulator works in renormalized coordinates (inputs scaled by 1/sqrt(P))
so grids stay in a fixed box; the physical launch power enters only
through the per-step phase-rotation constant and the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("awgn_avg_power", "awgn_amplitude", "optical_intensity", "nlpn")
COST_TAGS = ("square", "identity", "square_magnitude", "none")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


@dataclass(frozen=True)
class ChannelSpec:
    """Channel family plus physical parameters and cost constraint.

    For the NLPN family ``noise_variance`` is the total physical noise
    power in W, ``nlpn_power_w`` the physical launch power in W, and the
    simulator operates on the renormalized input x/sqrt(P) with
    ``constraint_level`` = 1.
    """

    family: str
    noise_variance: float
    cost_tag: str = "none"
    constraint_level: float = 0.0
    amplitude_limit: float = 0.0
    nlpn_steps: int = 1
    nlpn_gamma: float = 0.0      # rad/km/W
    nlpn_distance: float = 0.0   # km
    nlpn_power_w: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown channel family {self.family!r}")
        if self.cost_tag not in COST_TAGS:
            raise ValueError(f"unknown cost tag {self.cost_tag!r}")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")
        if self.cost_tag != "none" and self.constraint_level <= 0:
            raise ValueError("constraint level must be positive")
        if self.family in ("awgn_amplitude", "optical_intensity") and self.amplitude_limit <= 0:
            raise ValueError("amplitude limit must be positive")
        if self.family == "nlpn":
            if self.nlpn_steps < 1:
                raise ValueError("nlpn needs at least one step")
            if self.nlpn_power_w <= 0:
                raise ValueError("nlpn needs a positive launch power")

    @property
    def input_dim(self) -> int:
        return 2 if self.family == "nlpn" else 1

    @property
    def output_dim(self) -> int:
        return self.input_dim

    @property
    def phase_constant(self) -> float:
        """Per-step rotation constant gamma*L*P/K in renormalized units."""
        return self.nlpn_gamma * self.nlpn_distance * self.nlpn_power_w / self.nlpn_steps

    @property
    def step_noise_variance(self) -> float:
        """Per-step complex noise variance in renormalized units."""
        return self.noise_variance / (self.nlpn_steps * self.nlpn_power_w)


@dataclass
class NoiseRecord:
    """Frozen noise realization plus intermediate states for replay/backward."""

    family: str
    inputs: np.ndarray
    noise: np.ndarray
    states: np.ndarray = None  # (K+1, B, 2), NLPN only


def _check_alphabet(spec: ChannelSpec, x: np.ndarray) -> None:
    if spec.family == "awgn_amplitude":
        if np.any(np.abs(x) > spec.amplitude_limit + 1e-12):
            raise ValueError("input exceeds amplitude limit")
    elif spec.family == "optical_intensity":
        if np.any(x < -1e-12) or np.any(x > spec.amplitude_limit + 1e-12):
            raise ValueError("input outside [0, A]")


def channel_sample(spec: ChannelSpec, x_batch: np.ndarray,
                   rng: np.random.Generator, validate: bool = True):
    """Transmit a batch, returning (y_batch, NoiseRecord).

    ``validate=False`` skips the admissible-alphabet check; the reference
    generator uses this because batch renormalization can momentarily
    push samples outside the nominal alphabet during training.
    """
    x = np.atleast_2d(np.asarray(x_batch, dtype=float))
    if x.shape[1] != spec.input_dim:
        raise ValueError(
            f"{spec.family} expects {spec.input_dim} real columns, got {x.shape[1]}")
    if validate:
        _check_alphabet(spec, x)

    if spec.family != "nlpn":
        noise = rng.normal(0.0, np.sqrt(spec.noise_variance), size=x.shape)
        return x + noise, NoiseRecord(spec.family, x.copy(), noise)

    k_steps = spec.nlpn_steps
    alpha = spec.phase_constant
    # circularly symmetric: variance/2 per real component
    sigma_step = np.sqrt(spec.step_noise_variance / 2.0)
    noise = rng.normal(0.0, sigma_step, size=(k_steps,) + x.shape)
    states = np.empty((k_steps + 1,) + x.shape)
    states[0] = x
    for k in range(k_steps):
        u, v = states[k][:, 0], states[k][:, 1]
        theta = alpha * (u * u + v * v)
        c, s = np.cos(theta), np.sin(theta)
        states[k + 1][:, 0] = u * c - v * s + noise[k][:, 0]
        states[k + 1][:, 1] = u * s + v * c + noise[k][:, 1]
    return states[-1].copy(), NoiseRecord(spec.family, x.copy(), noise, states)


def channel_backward(spec: ChannelSpec, record: NoiseRecord,
                     dy_batch: np.ndarray) -> np.ndarray:
    """Jacobian-transpose product of the noise-frozen forward map."""
    if record.family != spec.family:
        raise ValueError("noise record does not match channel spec")
    dy = np.atleast_2d(np.asarray(dy_batch, dtype=float))
    if dy.shape != record.inputs.shape:
        raise ValueError("gradient shape does not match recorded batch")

    if spec.family != "nlpn":
        return dy.copy()

    alpha = spec.phase_constant
    du, dv = dy[:, 0].copy(), dy[:, 1].copy()
    for k in range(spec.nlpn_steps - 1, -1, -1):
        u, v = record.states[k][:, 0], record.states[k][:, 1]
        theta = alpha * (u * u + v * v)
        c, s = np.cos(theta), np.sin(theta)
        fu = u * c - v * s
        fv = u * s + v * c
        dtheta = -fv * du + fu * dv
        du_new = c * du + s * dv + dtheta * 2.0 * alpha * u
        dv_new = -s * du + c * dv + dtheta * 2.0 * alpha * v
        du, dv = du_new, dv_new
    return np.stack([du, dv], axis=1)


def channel_cost(spec: ChannelSpec, x):
    """Per-sample input cost. x may be a scalar, 1-d, or (B, dim) array."""
    if spec.cost_tag == "none":
        raise ValueError(f"{spec.family} has no cost function")
    x = np.asarray(x, dtype=float)
    if spec.cost_tag == "square":
        return np.squeeze(x * x) if x.ndim > 1 else x * x
    if spec.cost_tag == "identity":
        return np.squeeze(x) if x.ndim > 1 else x
    # square_magnitude over the trailing (re, im) axis
    if x.ndim >= 1 and x.shape[-1] == 2:
        return np.sum(x * x, axis=-1)
    return x * x


def cost_inverse(spec: ChannelSpec, value):
    """Inverse of the cost function on nonnegative scalars."""
    if spec.cost_tag == "none":
        raise ValueError(f"{spec.family} has no cost function")
    value = np.asarray(value, dtype=float)
    if np.any(value < 0):
        raise ValueError("cost values are nonnegative")
    if spec.cost_tag == "identity":
        return value
    return np.sqrt(value)
