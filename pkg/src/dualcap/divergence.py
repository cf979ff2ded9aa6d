"""Input-conditioned Donsker–Varadhan divergence estimation.

The statistics network takes the channel input as extra coordinates, so
one network covers a whole grid of inputs. Per-input estimates use the
plain DV form (mean minus log-mean-exp); the training loss pools the
exponential term across all inputs (arithmetic mean), which trains much
more stably than averaging per-input logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .rng import substream


def logmeanexp(values: np.ndarray) -> float:
    """Max-shifted log of the mean of exp(values)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("empty sample set")
    m = values.max()
    return float(m + np.log(np.mean(np.exp(values - m))))


def stat_input(y_batch: np.ndarray, x_point) -> np.ndarray:
    """Stack (y, x) rows for the statistics network: x broadcast per row."""
    y = np.atleast_2d(np.asarray(y_batch, dtype=float))
    x = np.asarray(x_point, dtype=float).reshape(-1)
    return np.hstack([y, np.tile(x, (y.shape[0], 1))])


@dataclass
class DivergenceEstimate:
    """Per-input DV estimate: value = term_positive - term_log (nats)."""

    x: np.ndarray
    value: float
    batch_size: int
    term_positive: float
    term_log: float


def dv_estimate(statnet: nn.MlpParams, x_point, y_samples,
                ref_samples) -> DivergenceEstimate:
    """DV divergence estimate at one input point.

    ``y_samples`` are channel outputs for input x; ``ref_samples`` come
    from the reference distribution. Finite for any finite network
    outputs thanks to the max-shifted log-mean-exp.
    """
    t_pos, _ = nn.mlp_forward(statnet, stat_input(y_samples, x_point))
    t_ref, _ = nn.mlp_forward(statnet, stat_input(ref_samples, x_point))
    if not (np.all(np.isfinite(t_pos)) and np.all(np.isfinite(t_ref))):
        raise nn.DivergedError("non-finite statistics network outputs")
    if t_pos.shape[0] < 1 or t_ref.shape[0] < 1:
        raise ValueError("empty sample sets")
    term_pos = float(t_pos.mean())
    term_log = logmeanexp(t_ref)
    x = np.asarray(x_point, dtype=float).reshape(-1)
    return DivergenceEstimate(x, term_pos - term_log, t_pos.shape[0],
                              term_pos, term_log)


def avg_dv_loss(statnet: nn.MlpParams, per_input_batches):
    """Averaged DV training loss and its gradient w.r.t. the network.

    ``per_input_batches`` is a sequence of (x, y_batch, ref_batch), one
    entry per training input, all with the same batch size B. Returns
    (loss, MlpGrads). The log term pools all N_t*B reference evaluations
    into a single mean before the logarithm.
    """
    batches = list(per_input_batches)
    if not batches:
        raise ValueError("no training inputs")
    sizes = {np.atleast_2d(y).shape[0] for _, y, _ in batches}
    sizes |= {np.atleast_2d(r).shape[0] for _, _, r in batches}
    if len(sizes) != 1:
        raise ValueError("inconsistent batch sizes across inputs")

    pos_rows = np.vstack([stat_input(y, x) for x, y, _ in batches])
    ref_rows = np.vstack([stat_input(r, x) for x, _, r in batches])
    n_pos, n_ref = pos_rows.shape[0], ref_rows.shape[0]
    t_all, tape = nn.mlp_forward(statnet, np.vstack([pos_rows, ref_rows]))
    t_pos = t_all[:n_pos, 0]
    t_ref = t_all[n_pos:, 0]
    lme = logmeanexp(t_ref)
    loss = float(-t_pos.mean() + lme)

    # d loss / dT: -1/n on the positive rows, softmax on the reference rows
    d_t = np.empty((n_pos + n_ref, 1))
    d_t[:n_pos, 0] = -1.0 / n_pos
    shifted = np.exp(t_ref - t_ref.max())
    d_t[n_pos:, 0] = shifted / shifted.sum()
    grads, _ = nn.mlp_backward(statnet, tape, d_t)
    return loss, grads


@dataclass
class TrainResult:
    statnet: nn.MlpParams
    adam_state: nn.AdamState
    loss_trace: list = field(default_factory=list)


def train_statnet(statnet: nn.MlpParams, sample_y, sample_ref, x_grid,
                  batch_size: int, learning_rate: float, iterations: int,
                  seed: int, adam_state: nn.AdamState = None,
                  stream_tag: str = "statnet") -> TrainResult:
    """Train the statistics network by Adam on the averaged DV loss.

    ``sample_y(x, B, rng)`` draws channel outputs at input x;
    ``sample_ref(j, B, rng)`` draws reference samples for grid index j.
    Fully deterministic per (seed, stream_tag).
    """
    if batch_size < 2:
        raise ValueError("batch size must be at least 2")
    state = adam_state if adam_state is not None else nn.init_adam(statnet)
    trace = []
    grid = [np.asarray(x, dtype=float).reshape(-1) for x in x_grid]
    for it in range(iterations):
        batches = []
        for j, x in enumerate(grid):
            rng_y = substream(seed, stream_tag, "y", it, j)
            rng_r = substream(seed, stream_tag, "ref", it, j)
            batches.append((x, sample_y(x, batch_size, rng_y),
                            sample_ref(j, batch_size, rng_r)))
        loss, grads = avg_dv_loss(statnet, batches)
        if not np.isfinite(loss):
            raise nn.DivergedError(f"divergence loss became non-finite at iteration {it}")
        nn.adam_step(statnet, grads, state, learning_rate)
        trace.append(loss)
    return TrainResult(statnet, state, trace)
