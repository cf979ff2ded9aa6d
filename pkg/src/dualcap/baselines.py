"""Ground-truth oracles: closed-form Gaussian results, channel
discretization, and cost-constrained Blahut–Arimoto.

These are the independent instruments the estimator is verified
against; none of them share code with the neural path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr  # standard normal CDF

from .channels import ChannelSpec

LN2 = np.log(2.0)


def gaussian_kl(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """KL(N(mu1, var1) || N(mu2, var2)) in nats."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / (2.0 * var2) - 0.5


def awgn_capacity(snr: float) -> float:
    """AWGN capacity 0.5*log2(1+SNR) in bits per use (SNR linear)."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    return 0.5 * np.log2(1.0 + snr)


@dataclass
class DiscreteChannelMatrix:
    """Row-stochastic transition matrix over binned outputs.

    ``transition[j, k]`` = P(output bin k | input j). Costs may be None
    for unconstrained channels.
    """

    input_grid: np.ndarray
    output_bins: np.ndarray          # bin edges, length N_o + 1
    transition: np.ndarray           # (N_d, N_o)
    costs: np.ndarray = None

    def __post_init__(self):
        if np.any(self.transition < 0):
            raise ValueError("negative transition probabilities")
        row_sums = self.transition.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")


def discretize_channel(spec: ChannelSpec, input_grid, n_bins: int = 512,
                       output_range=None) -> DiscreteChannelMatrix:
    """Bin the additive-Gaussian output into a row-stochastic matrix.

    Outermost bins absorb the tails, so every row sums to 1 by
    construction. NLPN is not supported (2-d continuous output).
    """
    if spec.family == "nlpn":
        raise ValueError("nlpn is not supported by the discretizer")
    if n_bins < 8:
        raise ValueError("need at least 8 output bins")
    grid = np.asarray(input_grid, dtype=float).reshape(-1)
    sigma = np.sqrt(spec.noise_variance)
    if output_range is None:
        output_range = (grid.min() - 6.0 * sigma, grid.max() + 6.0 * sigma)
    lo, hi = output_range
    if hi - lo < 6.0 * sigma:
        raise ValueError("output range too narrow for the noise level")
    edges = np.linspace(lo, hi, n_bins + 1)
    # interior edge CDFs; tails folded into the outermost bins
    z = (edges[None, 1:-1] - grid[:, None]) / sigma
    cdf = ndtr(z)
    w = np.empty((grid.size, n_bins))
    w[:, 0] = cdf[:, 0]
    w[:, 1:-1] = np.diff(cdf, axis=1)
    w[:, -1] = 1.0 - cdf[:, -1]
    costs = None
    if spec.cost_tag != "none":
        from .channels import channel_cost
        costs = np.asarray(channel_cost(spec, grid[:, None]), dtype=float).reshape(-1)
    return DiscreteChannelMatrix(grid, edges, w, costs)


@dataclass
class BaResult:
    capacity_bits: float
    input_distribution: np.ndarray
    mean_cost: float
    gamma: float
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)  # Lagrangian lower bounds, bits


def _ba_fixed_gamma(w: np.ndarray, costs, gamma: float, tol: float,
                    max_iters: int) -> BaResult:
    n_inputs = w.shape[0]
    p = np.full(n_inputs, 1.0 / n_inputs)
    logw = np.where(w > 0, np.log(np.maximum(w, 1e-300)), 0.0)
    gcost = gamma * costs if costs is not None else np.zeros(n_inputs)
    trace = []
    converged = False
    it = 0
    prev_lower = -np.inf
    for it in range(1, max_iters + 1):
        q = p @ w
        # D_j = sum_k W_jk * log(W_jk / q_k), with 0 log 0 = 0
        logq = np.where(q > 0, np.log(np.maximum(q, 1e-300)), 0.0)
        d = np.einsum("jk,jk->j", w, logw - logq[None, :])
        score = d - gcost
        lower = float(p @ score)
        upper = float(score.max())
        trace.append(lower / LN2)
        # stop on a closed duality gap or a stalled objective increment
        if upper - lower < tol * LN2 or lower - prev_lower < tol * LN2:
            converged = True
            break
        prev_lower = lower
        # multiplicative update with log-domain normalization
        logp = np.where(p > 0, np.log(np.maximum(p, 1e-300)), -np.inf) + score
        logp -= logp.max()
        p = np.exp(logp)
        p /= p.sum()
    # mutual information of the final distribution (without the gamma term)
    q = p @ w
    logq = np.where(q > 0, np.log(np.maximum(q, 1e-300)), 0.0)
    d = np.einsum("jk,jk->j", w, logw - logq[None, :])
    capacity_bits = float(p @ d) / LN2
    mean_cost = float(p @ costs) if costs is not None else 0.0
    return BaResult(capacity_bits, p, mean_cost, gamma, it, converged, trace)


def blahut_arimoto(matrix: DiscreteChannelMatrix, gamma: float = None,
                   target_cost: float = None, tol: float = 1e-9,
                   max_iters: int = 100000) -> BaResult:
    """Capacity of a discrete memoryless channel, optionally cost-constrained.

    With ``gamma`` given, runs the exponentially cost-weighted alternating
    update at that multiplier. With ``target_cost`` given, wraps an outer
    bisection on gamma so the converged input distribution meets the mean
    cost within 1e-4. With neither, plain unconstrained Blahut–Arimoto.
    """
    if gamma is not None and target_cost is not None:
        raise ValueError("give either gamma or target_cost, not both")
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = matrix.transition

    if target_cost is None:
        res = _ba_fixed_gamma(w, matrix.costs, gamma or 0.0, tol, max_iters)
        if not res.converged:
            raise RuntimeError("Blahut–Arimoto did not converge")
        return res

    if matrix.costs is None:
        raise ValueError("target_cost requires a cost vector")
    res0 = _ba_fixed_gamma(w, matrix.costs, 0.0, tol, max_iters)
    if res0.mean_cost <= target_cost + 1e-4:
        return res0
    # mean cost is nonincreasing in gamma; bracket then bisect
    hi = 1.0
    res_hi = _ba_fixed_gamma(w, matrix.costs, hi, tol, max_iters)
    while res_hi.mean_cost > target_cost and hi < 1e6:
        hi *= 2.0
        res_hi = _ba_fixed_gamma(w, matrix.costs, hi, tol, max_iters)
    lo = 0.0
    res = res_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        res = _ba_fixed_gamma(w, matrix.costs, mid, tol, max_iters)
        if abs(res.mean_cost - target_cost) < 1e-4:
            break
        if res.mean_cost > target_cost:
            lo = mid
        else:
            hi = mid
    if not res.converged:
        raise RuntimeError("Blahut–Arimoto did not converge")
    return res


def ba_to_csv(path, matrix: DiscreteChannelMatrix, result: BaResult) -> None:
    """Write the optimal input distribution plus a summary row."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input", "probability"])
        for x, p in zip(matrix.input_grid, result.input_distribution):
            writer.writerow([f"{x:.12g}", f"{p:.12g}"])
        writer.writerow(["capacity_bits", f"{result.capacity_bits:.12g}"])
        writer.writerow(["mean_cost", f"{result.mean_cost:.12g}"])
