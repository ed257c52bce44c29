import numpy as np
import pytest

from advae import autodiff as ad
from advae.errors import AdvaeError, ConfigError, ShapeError
from advae.models import (VARIANTS, Discriminator, ModelVariant, build_variant, decode,
                          discriminate, encode, sample_model, variant_from_sections,
                          variant_sections)
from advae.nn import init_mlp, read_checkpoint, write_checkpoint


def zero_out(net, bias):
    for layer in net.layers:
        layer.weight.data[...] = 0.0
        layer.bias.data[...] = 0.0
    net.layers[-1].bias.data[...] = bias


@pytest.mark.parametrize("kind", VARIANTS)
def test_shapes(kind):
    v = build_variant(kind, 2, 3, gen_hidden=[8], disc_hidden=[8])
    x = np.random.default_rng(0).standard_normal((5, 2))
    rng = np.random.default_rng(1)
    z = encode(v, x, rng)
    assert z.shape == (5, 3)
    assert decode(v, z, rng).shape == (5, 2)
    assert v.kind == kind
    for d in (v.inference_disc, v.generative_disc):
        if d is not None:
            assert discriminate(d, x, z).shape == (5,)


def test_implicit_encoder_zero_weights_give_bias():
    v = build_variant("implicit-encoder", 2, 2, gen_hidden=[4])
    zero_out(v.encoder.net, [0.5, -1.5])
    z = v.encoder(np.random.default_rng(0).standard_normal((4, 2)), np.random.default_rng(1))
    np.testing.assert_array_equal(z.data, [[0.5, -1.5]] * 4)


def test_gaussian_encoder_without_noise_is_mean():
    v = build_variant("gaussian", 2, 2, gen_hidden=[4])
    x = np.random.default_rng(0).standard_normal((3, 2))
    z = v.encoder(x, eps=np.zeros((3, 2)))
    np.testing.assert_array_equal(z.data, v.encoder.distribution(x).mean.data)


def test_implicit_decoder_zero_weights_give_bias():
    v = build_variant("implicit-decoder", 2, 2, gen_hidden=[4])
    zero_out(v.decoder.net, [1.0, 2.0])
    out = v.decoder(np.random.default_rng(0).standard_normal((3, 2)), np.random.default_rng(1))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0]] * 3)


def test_gaussian_decoder_is_trunk():
    v = build_variant("gaussian", 2, 2, gen_hidden=[4])
    z = np.random.default_rng(0).standard_normal((3, 2))
    np.testing.assert_array_equal(v.decoder(z).data, v.decoder.trunk(z).data)


@pytest.mark.parametrize("kind", ["full", "gaussian"])
def test_determinism(kind):
    x = np.random.default_rng(0).standard_normal((4, 2))
    outs = []
    for _ in range(2):
        v = build_variant(kind, 2, 2, seed=11)
        rng = np.random.default_rng(3)
        z = v.encoder(x, rng)
        outs.append((z.data, v.decoder(z, rng).data))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])


def test_encoder_weights_independent_of_variant():
    a = build_variant("implicit-encoder", 2, 2, seed=4)
    b = build_variant("full", 2, 2, seed=4)
    for (_, p), (_, q) in zip(a.encoder.named_parameters(), b.encoder.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


class TestDiscriminator:
    def test_zero_net_outputs_bias(self):
        d = Discriminator(init_mlp([3, 4, 1]), 2, 1)
        zero_out(d.net, [0.7])
        np.testing.assert_array_equal(d(np.ones((5, 2)), np.ones((5, 1))).data, [0.7] * 5)

    def test_clamp_bound(self):
        d = Discriminator(init_mlp([3, 4, 1], seed=2), 2, 1, clamp_bound=30.0)
        d.net.layers[-1].weight.data *= 1e4
        x, z = np.random.default_rng(0).standard_normal((50, 2)) * 10, np.ones((50, 1))
        out = d(x, z).data
        assert np.all(np.abs(out) <= 30.0) and np.abs(out).max() > 29.0

    def test_row_permutation(self):
        d = Discriminator(init_mlp([3, 4, 1], seed=5), 2, 1, clamp_bound=5.0)
        rng = np.random.default_rng(1)
        x, z = rng.standard_normal((6, 2)), rng.standard_normal((6, 1))
        perm = rng.permutation(6)
        np.testing.assert_array_equal(d(x[perm], z[perm]).data, d(x, z).data[perm])

    def test_mismatched_rows(self):
        d = Discriminator(init_mlp([3, 1]), 2, 1)
        with pytest.raises(ShapeError):
            d(np.ones((3, 2)), np.ones((4, 1)))

    def test_bad_bound(self):
        with pytest.raises(ConfigError):
            Discriminator(init_mlp([3, 1]), 2, 1, clamp_bound=0.0)


class TestVariant:
    def test_implicit_needs_discriminator(self):
        v = build_variant("full", 2, 2)
        with pytest.raises(AdvaeError):
            ModelVariant(v.encoder, v.decoder, None, v.generative_disc)

    def test_latent_mismatch(self):
        a, b = build_variant("gaussian", 2, 2), build_variant("gaussian", 2, 3)
        with pytest.raises(ShapeError):
            ModelVariant(a.encoder, b.decoder)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            build_variant("vq", 2, 2)

    def test_wrong_input_width(self):
        v = build_variant("full", 2, 2)
        with pytest.raises(ShapeError):
            v.encoder(np.ones((3, 3)), np.random.default_rng(0))

    def test_noise_shape_checked(self):
        v = build_variant("full", 2, 2)
        with pytest.raises(ShapeError):
            v.encoder(np.ones((3, 2)), eps=np.zeros((3, 5)))

    def test_parameter_names_prefixed(self):
        names = [n for n, _ in build_variant("full", 2, 2, gen_hidden=[4]).named_parameters()]
        assert {n.split(".")[0] for n in names} == {"encoder", "decoder", "inference_disc",
                                                    "generative_disc"}


@pytest.mark.parametrize("kind", VARIANTS)
def test_checkpoint_roundtrip(kind, tmp_path):
    v = build_variant(kind, 2, 2, gen_hidden=[6], disc_hidden=[5], clamp_bound=7.0, sigma2=0.5)
    path = tmp_path / "v.ckpt"
    write_checkpoint(path, variant_sections(v))
    _, secs = read_checkpoint(path)
    w = variant_from_sections(secs)
    assert w.kind == kind
    for (n1, p), (n2, q) in zip(v.named_parameters(), w.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p.data, q.data)
    if w.inference_disc is not None:
        assert w.inference_disc.clamp_bound == 7.0
    if kind == "gaussian":
        assert w.decoder.sigma2 == 0.5


def test_sample_model_leaves_no_graph():
    v = build_variant("full", 2, 2)
    out = sample_model(v, 10, np.random.default_rng(0))
    assert isinstance(out, np.ndarray) and out.shape == (10, 2)
    assert all(p.requires_grad for _, p in v.named_parameters())


def test_gaussian_encoder_gradient_reaches_log_variance_head():
    v = build_variant("gaussian", 2, 2, gen_hidden=[4])
    x = ad.Tensor(np.random.default_rng(0).standard_normal((3, 2)))
    ad.backward(ad.sum(v.encoder(x, eps=np.ones((3, 2)))))
    last = v.encoder.trunk.layers[-1]
    assert np.all(last.bias.grad[2:] != 0.0)
