"""Dual capacity-bound estimation.

Alternates between ascending the averaged DV loss in the statistics
network and descending the max-over-inputs dual objective in the
reference generator, then minimizes the resulting bound over the
Lagrange multiplier with a golden-section search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .channels import ChannelSpec, channel_cost, channel_sample
from .divergence import avg_dv_loss, logmeanexp, stat_input
from .ndt import NdtConfig, ndt_backward, ndt_generate
from .rng import substream

LN2 = np.log(2.0)
INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def uniform_grid(lo: float, hi: float, n: int):
    """n uniformly spaced scalar grid points as 1-element arrays."""
    if n < 1:
        raise ValueError("grid needs at least one point")
    return [np.array([x]) for x in np.linspace(lo, hi, n)]


def square_grid(lo: float, hi: float, n_per_axis: int):
    """n x n grid over [lo, hi]^2 as 2-element (re, im) arrays."""
    axis = np.linspace(lo, hi, n_per_axis)
    return [np.array([u, v]) for u in axis for v in axis]


@dataclass
class ExperimentConfig:
    """Everything a single estimation run needs."""

    channel: ChannelSpec
    grid_train: list
    grid_eval: list = None           # defaults to grid_train
    iterations: int = 500
    batch_size: int = 20000
    learning_rate: float = 1e-3
    latent_dim: int = 50
    pretrain_iterations: int = 200
    gamma: float = None              # None -> outer search (dual_bound)
    gamma_bracket: tuple = None
    gamma_tol: float = 0.02
    refine_iterations: int = None    # per-probe iterations after the first
    refine_learning_rate: float = None  # damped step size for later probes
    stat_hidden: list = field(default_factory=lambda: [100, 100])
    ndt_hidden: list = field(default_factory=lambda: [100, 100])
    ndt_output_activation: str = "linear"
    ndt_mode: str = "through_channel"
    renormalize: bool = True
    eval_repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if not self.grid_train:
            raise ValueError("empty training grid")
        if self.grid_eval is None:
            self.grid_eval = self.grid_train

    @property
    def constrained(self) -> bool:
        return self.channel.cost_tag != "none"


@dataclass
class DualBoundEstimate:
    """One trained run's bound: bound = f_hat + gamma * P (nats)."""

    gamma: float
    f_hat: float                     # nats
    bound_nats: float
    bound_bits: float
    x_star: np.ndarray
    per_input_values: np.ndarray     # D-hat(x) - gamma*c(x), nats
    per_input_divergences: np.ndarray
    grid: list
    loss_trace: list
    fhat_trace: list


@dataclass
class TrainState:
    """Mutable networks and optimizer moments carried across probes."""

    statnet: nn.MlpParams
    ndt: NdtConfig
    adam_theta: nn.AdamState
    adam_tau: nn.AdamState
    iteration: int = 0
    pretrained: bool = False


def init_state(config: ExperimentConfig) -> TrainState:
    spec = config.channel
    xdim = spec.input_dim
    ydim = spec.output_dim
    statnet = nn.init_mlp([ydim + xdim] + list(config.stat_hidden) + [1],
                          "linear", config.seed, stream=("stat_init",))
    scale = spec.amplitude_limit if config.ndt_output_activation == "sigmoid_scaled" else 1.0
    generator = nn.init_mlp([config.latent_dim] + list(config.ndt_hidden) + [xdim if config.ndt_mode == "through_channel" else ydim],
                            config.ndt_output_activation, config.seed,
                            output_scale=scale, stream=("ndt_init",))
    ndt = NdtConfig(config.ndt_mode, config.latent_dim, generator,
                    channel=spec, renormalize=config.renormalize and config.constrained)
    return TrainState(statnet, ndt, nn.init_adam(statnet), nn.init_adam(generator))


def _grid_costs(spec: ChannelSpec, grid) -> np.ndarray:
    if spec.cost_tag == "none":
        return np.zeros(len(grid))
    return np.array([np.asarray(channel_cost(spec, x)).item() for x in grid])


def _sample_iteration_batches(config: ExperimentConfig, state: TrainState, grid):
    """Fresh channel outputs and reference batches (with tapes) per input."""
    spec = config.channel
    b = config.batch_size
    it = state.iteration
    batches = []
    for j, x in enumerate(grid):
        x_rows = np.tile(np.asarray(x, dtype=float), (b, 1))
        y, _ = channel_sample(spec, x_rows, substream(config.seed, "chan", it, j))
        ref, tape = ndt_generate(state.ndt, b, substream(config.seed, "ndt", it, j))
        batches.append((np.asarray(x, dtype=float), y, ref, tape))
    return batches


def _statnet_step(config: ExperimentConfig, state: TrainState, batches,
                  learning_rate: float = None) -> float:
    loss, grads = avg_dv_loss(state.statnet,
                              [(x, y, ref) for x, y, ref, _ in batches])
    nn.adam_step(state.statnet, grads, state.adam_theta,
                 learning_rate or config.learning_rate)
    return loss


def _per_input_values(statnet, batches, costs, gamma):
    """Per-input dual values and the raw T outputs on the reference rows."""
    divergences = np.empty(len(batches))
    t_refs = []
    for j, (x, y, ref, _) in enumerate(batches):
        t_pos, _ = nn.mlp_forward(statnet, stat_input(y, x))
        t_ref, _ = nn.mlp_forward(statnet, stat_input(ref, x))
        divergences[j] = float(t_pos.mean()) - logmeanexp(t_ref[:, 0])
        t_refs.append(t_ref[:, 0])
    values = divergences - gamma * costs
    if not np.all(np.isfinite(values)):
        raise nn.DivergedError("non-finite dual objective values")
    return values, divergences, t_refs


def _ndt_step(config: ExperimentConfig, state: TrainState, batches,
              costs, gamma, learning_rate: float = None):
    """Descend the dual objective in the generator parameters.

    The max over inputs is subdifferentiated through its argmax element
    (ties broken toward the lowest grid index); only that input's
    reference batch receives gradient.
    """
    values, _, t_refs = _per_input_values(state.statnet, batches, costs, gamma)
    j_star = int(np.argmax(values))
    x, _, ref, tape = batches[j_star]
    # d F / dT(ref_i) = -softmax_i over the argmax input's reference batch
    t = t_refs[j_star]
    w = np.exp(t - t.max())
    d_t = -(w / w.sum())[:, None]
    _, fwd_tape = nn.mlp_forward(state.statnet, stat_input(ref, x))
    _, d_rows = nn.mlp_backward(state.statnet, fwd_tape, d_t)
    d_ref = d_rows[:, :np.atleast_2d(ref).shape[1]]
    grads = ndt_backward(state.ndt, tape, d_ref)
    nn.adam_step(state.ndt.generator, grads, state.adam_tau,
                 learning_rate or config.learning_rate)
    return float(values[j_star]), j_star


def f_hat_eval(statnet, ndt, channel, grid, gamma, batch_size, seed,
               repeats=1, stream_tag="eval"):
    """Fresh-sample evaluation of the dual objective.

    Per-input values are averaged over ``repeats`` independent batches
    before the max, which tames the upward bias of maximizing noisy
    estimates. Returns (f_hat, per_input_values, per_input_divergences,
    argmax index).
    """
    costs = _grid_costs(channel, grid)
    div_acc = np.zeros(len(grid))
    for rep in range(repeats):
        batches = []
        for j, x in enumerate(grid):
            x_rows = np.tile(np.asarray(x, dtype=float), (batch_size, 1))
            y, _ = channel_sample(channel, x_rows,
                                  substream(seed, stream_tag, "chan", rep, j))
            ref, _ = ndt_generate(ndt, batch_size,
                                  substream(seed, stream_tag, "ndt", rep, j))
            batches.append((np.asarray(x, dtype=float), y, ref, None))
        _, div, _ = _per_input_values(statnet, batches, costs, 0.0)
        div_acc += div
    divergences = div_acc / repeats
    values = divergences - gamma * costs
    j_star = int(np.argmax(values))
    return float(values[j_star]), values, divergences, j_star


def pretrain(config: ExperimentConfig, state: TrainState) -> list:
    """Initial statistics-network-only iterations (generator frozen)."""
    trace = []
    for _ in range(config.pretrain_iterations):
        batches = _sample_iteration_batches(config, state, config.grid_train)
        trace.append(_statnet_step(config, state, batches))
        state.iteration += 1
    state.pretrained = True
    return trace


def run_alternating(config: ExperimentConfig, state: TrainState = None,
                    iterations: int = None, gamma: float = None,
                    learning_rate: float = None) -> DualBoundEstimate:
    """Alternating training at a fixed multiplier, then fresh evaluation.

    A caller-supplied ``state`` warm-starts the networks (used by the
    outer gamma search); otherwise networks are initialized and
    pretrained here. When the training and evaluation grids coincide,
    the statistics-step samples are reused for the generator step.
    """
    spec = config.channel
    if gamma is None:
        gamma = config.gamma if config.gamma is not None else 0.0
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if not config.constrained and gamma != 0.0:
        raise ValueError("unconstrained channel requires gamma = 0")
    if state is None:
        state = init_state(config)
    loss_trace = []
    if not state.pretrained:
        loss_trace.extend(pretrain(config, state))
    n_iter = config.iterations if iterations is None else iterations
    same_grid = (len(config.grid_train) == len(config.grid_eval) and all(
        np.array_equal(a, b) for a, b in zip(config.grid_train, config.grid_eval)))
    costs_eval = _grid_costs(spec, config.grid_eval)
    fhat_trace = []
    for _ in range(n_iter):
        batches = _sample_iteration_batches(config, state, config.grid_train)
        loss_trace.append(_statnet_step(config, state, batches, learning_rate))
        if not same_grid:
            batches = _sample_iteration_batches(config, state, config.grid_eval)
        fhat, j_star = _ndt_step(config, state, batches, costs_eval, gamma,
                                 learning_rate)
        fhat_trace.append((fhat, j_star))
        state.iteration += 1

    f_hat, values, divergences, j_star = f_hat_eval(
        state.statnet, state.ndt, spec, config.grid_eval, gamma,
        config.batch_size, config.seed, repeats=config.eval_repeats)
    p = spec.constraint_level if config.constrained else 0.0
    bound = f_hat + gamma * p
    return DualBoundEstimate(
        gamma, f_hat, bound, bound / LN2, config.grid_eval[j_star],
        values, divergences, config.grid_eval, loss_trace, fhat_trace)


@dataclass
class GoldenResult:
    x_min: float
    value: float
    n_evals: int
    converged: bool
    trace: list = field(default_factory=list)  # (x, f(x)) in evaluation order


def golden_section_min(objective, lo: float, hi: float, tol: float,
                       max_evals: int = 80) -> GoldenResult:
    """Golden-section minimization of a unimodal scalar function.

    Contracts [lo, hi] by (sqrt(5)-1)/2 per step until the bracket is
    narrower than ``tol`` or ``max_evals`` objective calls were spent
    (the result is then flagged as not converged).
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if tol <= 0:
        raise ValueError("tol must be positive")
    trace = []

    def f(x):
        y = objective(x)
        trace.append((x, y))
        return y

    a, b = float(lo), float(hi)
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while b - a > tol and evals < max_evals:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        evals += 1
    x_min = 0.5 * (a + b)
    value = min(fc, fd)
    return GoldenResult(x_min, value, evals, b - a <= tol, trace)


def default_gamma_bracket(config: ExperimentConfig) -> tuple:
    """Bracket [0, snr/(1+snr)/P]: twice the Gaussian-channel optimal
    multiplier 0.5*snr/((1+snr)*P) at the run's SNR, floored at 0.1."""
    spec = config.channel
    p = spec.constraint_level
    if spec.family == "nlpn":
        snr = spec.nlpn_power_w / spec.noise_variance
    else:
        snr = p / spec.noise_variance
    return (0.0, max(snr / (1.0 + snr) / p, 0.1))


def dual_bound(config: ExperimentConfig, bracket: tuple = None,
               tol: float = None):
    """Minimize the dual bound over the Lagrange multiplier.

    Unconstrained channels (or a fixed config.gamma) run once; otherwise
    a golden-section search probes gamma values, each probe continuing
    training from the shared warm-started networks. The first probe runs
    the full iteration budget, later probes a refinement budget.
    Returns (best DualBoundEstimate, search trace as [(gamma, bound_bits)]).
    """
    if not config.constrained:
        return run_alternating(config, gamma=0.0), []
    if config.gamma is not None:
        return run_alternating(config, gamma=config.gamma), []
    if bracket is None:
        bracket = config.gamma_bracket or default_gamma_bracket(config)
    if tol is None:
        tol = config.gamma_tol
    refine = config.refine_iterations
    if refine is None:
        refine = max(50, config.iterations // 5)
    refine_lr = config.refine_learning_rate
    if refine_lr is None:
        refine_lr = config.learning_rate / 5.0

    state = init_state(config)
    pretrain(config, state)
    best = {"estimate": None}
    first = {"done": False}

    def objective(gamma):
        n_iter = config.iterations if not first["done"] else refine
        lr = None if not first["done"] else refine_lr
        first["done"] = True
        est = run_alternating(config, state=state, iterations=n_iter,
                              gamma=gamma, learning_rate=lr)
        if best["estimate"] is None or est.bound_nats < best["estimate"].bound_nats:
            best["estimate"] = est
        return est.bound_nats

    result = golden_section_min(objective, bracket[0], bracket[1], tol)
    trace = [(g, v / LN2) for g, v in result.trace]
    return best["estimate"], trace
