"""Experiment front-end.

Subcommands:
  estimate <config>        single capacity-bound run
  sweep <config>           bound across an SNR (dB) or power (dBm) sweep
  divergence-demo <config> train/evaluate the divergence estimator alone
  ba <config>              Blahut–Arimoto baseline for the configured preset
  gradcheck                finite-difference verification of all gradients

Configs are YAML; unknown keys are rejected. Every run writes a
manifest, a per-iteration trace CSV, and a results CSV whose
deterministic columns are byte-stable under a fixed seed (wall time sits
in the final column so reproducibility diffs can strip it).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, baselines, nn
from .capacity import (ExperimentConfig, dual_bound, square_grid, uniform_grid)
from .channels import ChannelSpec, dbm_to_watts
from .divergence import dv_estimate, train_statnet
from .rng import substream

PRESETS = ("awgn_avg", "awgn_amp", "oi", "nlpn", "divergence_demo")
RESULTS_SCHEMA = "# dualcap results v1: sweep_value,gamma,bound_bits,oracle_bits,seed,wall_time_s"
TOP_KEYS = {"preset", "seed", "desk_scale", "snr_db", "power_dbm", "gamma",
            "sweep", "out", "overrides", "reference_csv"}
OVERRIDE_KEYS = {"iterations", "batch_size", "learning_rate", "latent_dim",
                 "pretrain_iterations", "gamma_bracket", "gamma_tol",
                 "refine_iterations", "refine_learning_rate", "eval_repeats", "ndt_mode",
                 "stat_hidden", "ndt_hidden"}


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    """Parsed experiment file: preset, sweep values, overrides, output path."""

    preset: str
    seed: int = 0
    desk_scale: bool = False
    sweep: list = None          # SNR dB (awgn/oi) or power dBm (nlpn)
    point: float = None         # single-run sweep value
    gamma: float = None
    out: str = "runs"
    overrides: dict = field(default_factory=dict)
    reference_csv: str = None

    def values(self) -> list:
        if self.sweep is not None:
            return list(self.sweep)
        return [self.point if self.point is not None else _default_point(self.preset)]


def _default_point(preset: str) -> float:
    return -10.0 if preset == "nlpn" else 0.0


def load_config(path) -> SweepSpec:
    """Parse and validate a YAML experiment file."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    preset = raw.get("preset")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    overrides = raw.get("overrides") or {}
    bad = set(overrides) - OVERRIDE_KEYS
    if bad:
        raise ConfigError(f"unknown override keys: {sorted(bad)}")
    if "batch_size" in overrides and overrides["batch_size"] < 2:
        raise ConfigError("overrides.batch_size: must be at least 2")
    if "iterations" in overrides and overrides["iterations"] < 1:
        raise ConfigError("overrides.iterations: must be at least 1")
    sweep = raw.get("sweep")
    if sweep is not None:
        if not sweep:
            raise ConfigError("sweep: list must be nonempty")
        if list(sweep) != sorted(set(sweep)):
            raise ConfigError("sweep: values must be strictly increasing")
    point = raw.get("power_dbm") if preset == "nlpn" else raw.get("snr_db")
    return SweepSpec(preset, int(raw.get("seed", 0)), bool(raw.get("desk_scale", False)),
                     sweep, point, raw.get("gamma"), raw.get("out", "runs"),
                     dict(overrides), raw.get("reference_csv"))


def build_channel(preset: str, value: float) -> ChannelSpec:
    """Channel spec for a preset at one sweep value (SNR dB or power dBm)."""
    if preset == "awgn_avg":
        snr = 10.0 ** (value / 10.0)
        return ChannelSpec("awgn_avg_power", 1.0 / snr, "square", 1.0)
    if preset == "awgn_amp":
        snr = 10.0 ** (value / 10.0)
        return ChannelSpec("awgn_amplitude", 1.0 / snr, "none", amplitude_limit=1.0)
    if preset == "oi":
        snr = 10.0 ** (value / 10.0)
        return ChannelSpec("optical_intensity", 1.0 / snr, "identity", 1.0,
                           amplitude_limit=2.5)
    if preset == "nlpn":
        return ChannelSpec("nlpn", dbm_to_watts(-21.3), "square_magnitude", 1.0,
                           nlpn_steps=50, nlpn_gamma=1.27, nlpn_distance=5000.0,
                           nlpn_power_w=dbm_to_watts(value))
    raise ConfigError(f"preset {preset!r} has no channel")


def make_experiment(spec: SweepSpec, value: float) -> ExperimentConfig:
    """ExperimentConfig for one sweep point, with paper defaults filled."""
    preset = spec.preset
    channel = build_channel(preset, value)
    if preset == "nlpn":
        grid = square_grid(-1.75, 1.75, 9)
        hidden = [150, 150]
        iterations, batch = 2500, 20000
        pretrain = 200
        if spec.desk_scale:
            iterations, batch, pretrain = 250, 1000, 100
    else:
        grid = {"awgn_avg": uniform_grid(-2.5, 2.5, 15),
                "awgn_amp": uniform_grid(-1.0, 1.0, 15),
                "oi": uniform_grid(0.0, 2.5, 15)}[preset]
        hidden = [100, 100]
        iterations, batch, pretrain = 500, 20000, 200
        if spec.desk_scale:
            batch = 2000
    activation = {"awgn_avg": "linear", "awgn_amp": "tanh",
                  "oi": "sigmoid_scaled", "nlpn": "linear"}[preset]
    config = ExperimentConfig(
        channel=channel, grid_train=grid, iterations=iterations,
        batch_size=batch, pretrain_iterations=pretrain, gamma=spec.gamma,
        stat_hidden=hidden, ndt_hidden=hidden,
        ndt_output_activation=activation, seed=spec.seed)
    for key, val in spec.overrides.items():
        setattr(config, key, val)
    return config


def oracle_bits(preset: str, value: float):
    """Closed-form or Blahut–Arimoto reference for a sweep point."""
    if preset == "awgn_avg":
        return baselines.awgn_capacity(10.0 ** (value / 10.0))
    if preset in ("awgn_amp", "oi"):
        channel = build_channel(preset, value)
        lo, hi = (-1.0, 1.0) if preset == "awgn_amp" else (0.0, 2.5)
        matrix = baselines.discretize_channel(channel, np.linspace(lo, hi, 15))
        if preset == "awgn_amp":
            return baselines.blahut_arimoto(matrix).capacity_bits
        return baselines.blahut_arimoto(matrix, target_cost=1.0).capacity_bits
    return None


def _config_echo(spec: SweepSpec, value: float) -> str:
    data = {f.name: getattr(spec, f.name) for f in fields(spec)}
    data["sweep_value"] = value
    data["version"] = __version__
    return yaml.safe_dump(data, sort_keys=True)


def _write_manifest(path: Path, spec: SweepSpec, value: float, digest: str) -> None:
    with open(path, "w") as fh:
        fh.write(_config_echo(spec, value))
        fh.write(f"parameter_digest: {digest}\n")


def _write_trace(path: Path, estimate) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss_theta", "f_hat", "argmax_index"])
        fhat = dict(enumerate(estimate.fhat_trace))
        offset = len(estimate.loss_trace) - len(estimate.fhat_trace)
        for it, loss in enumerate(estimate.loss_trace):
            extra = fhat.get(it - offset)
            if extra is None:
                writer.writerow([it, f"{loss:.9g}", "", ""])
            else:
                writer.writerow([it, f"{loss:.9g}", f"{extra[0]:.9g}", extra[1]])


def _results_writer(path: Path):
    fh = open(path, "w", newline="")
    fh.write(RESULTS_SCHEMA + "\n")
    writer = csv.writer(fh)
    writer.writerow(["sweep_value", "gamma", "bound_bits", "oracle_bits",
                     "seed", "wall_time_s"])
    return fh, writer


def _run_point(spec: SweepSpec, value: float, out_dir: Path):
    config = make_experiment(spec, value)
    t0 = time.perf_counter()
    estimate, search_trace = dual_bound(config)
    wall = time.perf_counter() - t0
    tag = f"{value:g}".replace("-", "m").replace(".", "p")
    _write_trace(out_dir / f"trace_{tag}.csv", estimate)
    if search_trace:
        with open(out_dir / f"search_{tag}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gamma", "bound_bits"])
            for g, v in search_trace:
                writer.writerow([f"{g:.9g}", f"{v:.9g}"])
    return estimate, wall


def cmd_estimate(spec: SweepSpec) -> int:
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    value = spec.values()[0]
    estimate, wall = _run_point(spec, value, out_dir)
    oracle = oracle_bits(spec.preset, value)
    fh, writer = _results_writer(out_dir / "results.csv")
    with fh:
        writer.writerow([f"{value:g}", f"{estimate.gamma:.9g}",
                         f"{estimate.bound_bits:.9g}",
                         "" if oracle is None else f"{oracle:.9g}",
                         spec.seed, f"{wall:.3f}"])
    _write_manifest(out_dir / "manifest.txt", spec, value, "")
    print(f"{spec.preset} @ {value:g}: bound {estimate.bound_bits:.4f} bits "
          f"(gamma {estimate.gamma:.4f})"
          + ("" if oracle is None else f", oracle {oracle:.4f} bits"))
    return 0


def _load_reference(path) -> dict:
    ref = {}
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                ref[float(row[0])] = float(row[1])
            except ValueError:
                continue
    return ref


def cmd_sweep(spec: SweepSpec) -> int:
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = _load_reference(spec.reference_csv) if spec.reference_csv else None
    fh, writer = _results_writer(out_dir / "results.csv")
    failures = 0
    with fh:
        for value in spec.values():
            try:
                estimate, wall = _run_point(spec, value, out_dir)
            except Exception as exc:  # per-point failures do not stop the sweep
                failures += 1
                writer.writerow([f"{value:g}", "", f"ERROR: {exc}", "", spec.seed, ""])
                continue
            oracle = oracle_bits(spec.preset, value)
            row = [f"{value:g}", f"{estimate.gamma:.9g}",
                   f"{estimate.bound_bits:.9g}",
                   "" if oracle is None else f"{oracle:.9g}",
                   spec.seed, f"{wall:.3f}"]
            if reference is not None:
                row.insert(4, f"{reference.get(value, '')}")
            writer.writerow(row)
            print(f"{spec.preset} @ {value:g}: {estimate.bound_bits:.4f} bits")
    _write_manifest(out_dir / "manifest.txt", spec, spec.values()[0], "")
    return 1 if failures else 0


DEMO_GRID = [round(-1.0 + 0.2 * k, 10) for k in range(11)]
DEMO_HELD_OUT = [-1.4, -1.2, 1.2, 1.4]


def run_divergence_demo(batch_size=2000, iterations=500, learning_rate=1e-3,
                        seed=0, eval_repeats=10):
    """Train the estimator on N(x,1) vs N(1,2) and tabulate it per input.

    Returns rows of (x, estimate, true KL, held_out flag).
    """
    statnet = nn.init_mlp([2, 100, 100, 1], "linear", seed, stream=("demo_stat",))

    def sample_y(x, b, rng):
        return x[0] + rng.standard_normal((b, 1))

    def sample_ref(_j, b, rng):
        return 1.0 + np.sqrt(2.0) * rng.standard_normal((b, 1))

    grid = [np.array([x]) for x in DEMO_GRID]
    result = train_statnet(statnet, sample_y, sample_ref, grid, batch_size,
                           learning_rate, iterations, seed, stream_tag="demo")
    rows = []
    for x in DEMO_GRID + DEMO_HELD_OUT:
        est = 0.0
        for rep in range(eval_repeats):
            rng_y = substream(seed, "demo_eval", "y", rep, int(round(x * 10)))
            rng_r = substream(seed, "demo_eval", "r", rep, int(round(x * 10)))
            y = x + rng_y.standard_normal((batch_size, 1))
            ref = 1.0 + np.sqrt(2.0) * rng_r.standard_normal((batch_size, 1))
            est += dv_estimate(result.statnet, [x], y, ref).value
        est /= eval_repeats
        truth = baselines.gaussian_kl(x, 1.0, 1.0, 2.0)
        rows.append((x, est, truth, x not in DEMO_GRID))
    return rows, result


def cmd_divergence_demo(spec: SweepSpec) -> int:
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = spec.overrides.get("batch_size", 2000 if spec.desk_scale else 20000)
    iters = spec.overrides.get("iterations", 500)
    rows, _ = run_divergence_demo(batch_size=batch, iterations=iters, seed=spec.seed)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        fh.write("# dualcap divergence demo v1\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "estimate_nats", "true_kl_nats", "held_out"])
        for x, est, truth, held in rows:
            writer.writerow([f"{x:g}", f"{est:.9g}", f"{truth:.9g}", int(held)])
    _write_manifest(out_dir / "manifest.txt", spec, 0.0, "")
    worst = max(abs(est - truth) for x, est, truth, held in rows if not held)
    print(f"divergence demo: max training-grid error {worst:.4f} nats")
    return 0


def cmd_ba(spec: SweepSpec) -> int:
    if spec.preset not in ("awgn_avg", "awgn_amp", "oi"):
        print(f"Blahut–Arimoto baseline is not available for {spec.preset}",
              file=sys.stderr)
        return 2
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    value = spec.values()[0]
    channel = build_channel(spec.preset, value)
    lo, hi = {"awgn_avg": (-2.5, 2.5), "awgn_amp": (-1.0, 1.0),
              "oi": (0.0, 2.5)}[spec.preset]
    matrix = baselines.discretize_channel(channel, np.linspace(lo, hi, 15))
    if spec.preset == "awgn_amp":
        result = baselines.blahut_arimoto(matrix)
    else:
        result = baselines.blahut_arimoto(matrix, target_cost=1.0)
    baselines.ba_to_csv(out_dir / "results.csv", matrix, result)
    print(f"BA {spec.preset} @ {value:g}: {result.capacity_bits:.5f} bits "
          f"(mean cost {result.mean_cost:.4f})")
    return 0


def cmd_gradcheck() -> int:
    from .gradcheck import run_all_checks

    ok = True
    for name, rel_err, tol in run_all_checks():
        status = "ok" if rel_err < tol else "FAIL"
        ok &= rel_err < tol
        print(f"{name:<40s} rel err {rel_err:.3e} (tol {tol:g})  {status}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dualcap", description="Neural dual upper bounds on channel capacity")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("estimate", "sweep", "divergence-demo", "ba"):
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--desk-scale", action="store_true")
    sub.add_parser("gradcheck")
    args = parser.parse_args(argv)

    if args.command == "gradcheck":
        return cmd_gradcheck()
    try:
        spec = load_config(args.config)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.out = args.out
    if args.desk_scale:
        spec.desk_scale = True
    handler = {"estimate": cmd_estimate, "sweep": cmd_sweep,
               "divergence-demo": cmd_divergence_demo, "ba": cmd_ba}[args.command]
    try:
        return handler(spec)
    except Exception as exc:
        out_dir = Path(spec.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
