import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcap import nn
from dualcap.channels import ChannelSpec, channel_cost, dbm_to_watts
from dualcap.gradcheck import ndt_chain_fd, renormalize_fd
from dualcap.ndt import (NdtConfig, ndt_backward, ndt_generate, renormalize,
                         renormalize_backward, sample_latent)
from dualcap.rng import substream

SQ = ChannelSpec("awgn_avg_power", 1.0, "square", 1.0)
OI = ChannelSpec("optical_intensity", 1.0, "identity", 1.0, amplitude_limit=2.5)
NLPN = ChannelSpec("nlpn", dbm_to_watts(-21.3), "square_magnitude", 1.0,
                   nlpn_steps=5, nlpn_gamma=1.27, nlpn_distance=5000.0,
                   nlpn_power_w=dbm_to_watts(-10.0))


def constant_generator(c, latent_dim=3, out_dim=1):
    return nn.MlpParams([latent_dim, out_dim],
                        [np.zeros((out_dim, latent_dim))],
                        [np.full(out_dim, float(c))])


def test_latent_moments():
    z = sample_latent(10 ** 6, 1, substream(0, "lat"))
    assert abs(z.mean()) < 4.0 / 1000.0
    assert abs(z.var() - 1.0) < 0.01


def test_latent_deterministic_and_shape():
    a = sample_latent(3, 50, substream(1, "lat"))
    b = sample_latent(3, 50, substream(1, "lat"))
    assert np.array_equal(a, b)
    row = sample_latent(1, 50, substream(2, "lat"))
    assert row.shape == (1, 50)
    assert np.isfinite(row).all()
    with pytest.raises(ValueError):
        sample_latent(0, 50, substream(0, "lat"))


def test_renormalize_hand_example():
    out, divisor = renormalize(np.array([[1.0], [3.0]]), SQ)
    assert divisor == pytest.approx(np.sqrt(5.0))
    assert np.allclose(out, [[1.0 / np.sqrt(5)], [3.0 / np.sqrt(5)]])
    assert np.mean(out ** 2) == pytest.approx(1.0, rel=1e-12)


def test_renormalize_fixed_points():
    batch = np.array([[1.0], [-1.0]])  # mean square cost already 1
    out, divisor = renormalize(batch, SQ)
    assert divisor == pytest.approx(1.0)
    assert np.allclose(out, batch)
    oi_batch = np.array([[0.5], [1.5]])  # mean identity cost already 1
    out, divisor = renormalize(oi_batch, OI)
    assert divisor == pytest.approx(1.0)
    assert np.allclose(out, oi_batch)


def test_renormalize_degenerate_batch():
    with pytest.raises(ValueError):
        renormalize(np.zeros((4, 1)), SQ)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=12))
def test_renormalized_mean_cost_equals_constraint(values):
    batch = np.asarray(values)[:, None]
    for spec in (SQ, OI):
        out, _ = renormalize(batch, spec)
        mean_cost = float(np.mean(channel_cost(spec, out)))
        assert mean_cost == pytest.approx(spec.constraint_level, rel=1e-12)


def test_renormalized_mean_cost_complex():
    rng = substream(3, "cplx")
    batch = rng.uniform(-2.0, 2.0, (16, 2))
    out, _ = renormalize(batch, NLPN)
    assert float(np.mean(channel_cost(NLPN, out))) == pytest.approx(1.0, rel=1e-12)
    # real and imaginary parts divided by the same scalar
    ratio = batch / out
    assert np.allclose(ratio, ratio[0, 0])


def test_renormalize_backward_finite_difference():
    assert renormalize_fd(np.array([[1.0], [3.0]]), SQ,
                          np.array([[0.7], [-0.4]])) < 1e-6
    rng = substream(4, "fd")
    assert renormalize_fd(rng.uniform(0.1, 2.0, (5, 1)), OI,
                          rng.standard_normal((5, 1))) < 1e-6
    assert renormalize_fd(rng.uniform(-2.0, 2.0, (4, 2)), NLPN,
                          rng.standard_normal((4, 2))) < 1e-6


def test_renormalize_backward_cross_sample_coupling():
    s = np.array([[1.0], [3.0]])
    _, divisor = renormalize(s, SQ)
    # gradient only at sample 0 still produces a gradient at sample 1
    ds = renormalize_backward(s, divisor, SQ, np.array([[1.0], [0.0]]))
    assert ds[1, 0] != 0.0


def test_mode_b_constant_generator():
    ndt = NdtConfig("direct", 3, constant_generator(2.5))
    ref, _ = ndt_generate(ndt, 10, substream(5, "b"))
    assert np.all(ref == 2.5)


def test_mode_a_composition_with_vanishing_noise():
    # generator emitting {1, 3} through a square-cost renormalizer and a
    # noiseless channel must emit {1, 3}/sqrt(5)
    gen = nn.MlpParams([1, 1], [np.array([[1.0]])], [np.zeros(1)])
    spec = ChannelSpec("awgn_avg_power", 1e-30, "square", 1.0)
    ndt = NdtConfig("through_channel", 1, gen, channel=spec)

    class FixedRng:
        def standard_normal(self, size):
            return np.array([[1.0], [3.0]])

        def normal(self, loc, scale, size):
            return np.zeros(size)

    ref, tape = ndt_generate(ndt, 2, FixedRng())
    assert np.allclose(ref, [[1.0 / np.sqrt(5)], [3.0 / np.sqrt(5)]], atol=1e-12)
    assert tape.divisor == pytest.approx(np.sqrt(5.0))


def test_mode_a_amplitude_channel_skips_renormalization():
    gen = nn.init_mlp([4, 8, 1], "tanh", seed=6)
    amp = ChannelSpec("awgn_amplitude", 0.01, amplitude_limit=1.0)
    ndt = NdtConfig("through_channel", 4, gen, channel=amp, renormalize=False)
    ref, tape = ndt_generate(ndt, 64, substream(6, "amp"))
    assert tape.divisor is None
    # intermediate channel inputs respect the amplitude constraint
    s, _ = nn.mlp_forward(gen, tape.latents)
    assert np.all(np.abs(s) < 1.0)


def test_mode_b_backward_reduces_to_generator_backward():
    gen = nn.init_mlp([3, 6, 1], "linear", seed=7)
    ndt = NdtConfig("direct", 3, gen)
    ref, tape = ndt_generate(ndt, 5, substream(7, "bb"))
    d_ref = substream(7, "dref").standard_normal(ref.shape)
    grads = ndt_backward(ndt, tape, d_ref)
    direct, _ = nn.mlp_backward(gen, tape.generator_tape, d_ref)
    for a, b in zip(grads.weights + grads.biases, direct.weights + direct.biases):
        assert np.array_equal(a, b)


def test_mode_a_full_chain_finite_difference():
    gen = nn.init_mlp([4, 6, 1], "linear", seed=8)
    ndt = NdtConfig("through_channel", 4, gen, channel=SQ)
    assert ndt_chain_fd(ndt, 6, seed=8) < 1e-4


def test_mode_a_nlpn_chain_finite_difference():
    gen = nn.init_mlp([3, 5, 2], "linear", seed=9)
    ndt = NdtConfig("through_channel", 3, gen, channel=NLPN)
    assert ndt_chain_fd(ndt, 4, seed=9) < 1e-4


def test_generation_deterministic():
    gen = nn.init_mlp([3, 6, 1], "linear", seed=10)
    ndt = NdtConfig("through_channel", 3, gen, channel=SQ)
    a, _ = ndt_generate(ndt, 8, substream(10, "det"))
    b, _ = ndt_generate(ndt, 8, substream(10, "det"))
    assert np.array_equal(a, b)


def test_config_validation():
    gen = nn.init_mlp([3, 6, 1], "linear", seed=0)
    with pytest.raises(ValueError):
        NdtConfig("bogus", 3, gen)
    with pytest.raises(ValueError):
        NdtConfig("direct", 5, gen)  # latent width mismatch
    with pytest.raises(ValueError):
        NdtConfig("through_channel", 3, gen, channel=None)
