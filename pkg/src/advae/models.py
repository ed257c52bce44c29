"""Encoder, decoder and discriminator networks and their assembly into variants."""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .distributions import DiagonalGaussian, sample_reparam
from .errors import AdvaeError, ConfigError, ShapeError
from .nn import Mlp, frozen, init_mlp, mlp_from_section, mlp_section

VARIANTS = ("gaussian", "implicit-encoder", "implicit-decoder", "full")


def _check_rows(x, width, what):
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must have shape (n, {width})", x.shape)


def _noise(rng, n, width, eps):
    if eps is None:
        return rng.standard_normal((n, width))
    eps = np.asarray(eps.data if isinstance(eps, ad.Tensor) else eps, dtype=np.float64)
    if eps.shape != (n, width):
        raise ShapeError("noise has the wrong shape", eps.shape, (n, width))
    return eps


class GaussianEncoder:
    """x -> (mean, log variance) of q(z|x); samples by reparametrization."""

    def __init__(self, trunk: Mlp, latent_dim: int):
        if trunk.dims[-1] != 2 * latent_dim:
            raise ShapeError("Gaussian encoder output must be 2 * latent_dim",
                             (trunk.dims[-1],), (2 * latent_dim,))
        self.trunk = trunk
        self.latent_dim = latent_dim
        self.data_dim = trunk.dims[0]

    def parameters(self):
        return self.trunk.parameters()

    def named_parameters(self):
        return self.trunk.named_parameters("encoder.")

    def distribution(self, x):
        x = ad.as_tensor(x)
        _check_rows(x, self.data_dim, "encoder input")
        out = self.trunk(x)
        L = self.latent_dim
        return DiagonalGaussian(ad.columns(out, 0, L), ad.columns(out, L, 2 * L))

    def __call__(self, x, rng=None, eps=None):
        q = self.distribution(x)
        return sample_reparam(q, _noise(rng, x.shape[0], self.latent_dim, eps))


class ImplicitEncoder:
    """z = net(concat(x, eps)) with eps ~ N(0, I); q(z|x) has no density."""

    def __init__(self, net: Mlp, data_dim: int, noise_dim: int):
        if net.dims[0] != data_dim + noise_dim:
            raise ShapeError("implicit encoder input must be data_dim + noise_dim",
                             (net.dims[0],), (data_dim + noise_dim,))
        self.net = net
        self.data_dim = data_dim
        self.noise_dim = noise_dim
        self.latent_dim = net.dims[-1]

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters("encoder.")

    def __call__(self, x, rng=None, eps=None):
        x = ad.as_tensor(x)
        _check_rows(x, self.data_dim, "encoder input")
        noise = _noise(rng, x.shape[0], self.noise_dim, eps)
        return self.net(ad.concat([x, ad.Tensor(noise)]))


class GaussianDecoder:
    """z -> mean of p(x|z) = N(mean, sigma2 I); ``sigma2`` is fixed."""

    def __init__(self, trunk: Mlp, sigma2: float = 1.0):
        if sigma2 <= 0:
            raise ConfigError("sigma2", "must be positive")
        self.trunk = trunk
        self.sigma2 = float(sigma2)
        self.latent_dim = trunk.dims[0]
        self.data_dim = trunk.dims[-1]

    def parameters(self):
        return self.trunk.parameters()

    def named_parameters(self):
        return self.trunk.named_parameters("decoder.")

    def distribution(self, z):
        mu = self(z)
        return DiagonalGaussian(mu, np.full(self.data_dim, np.log(self.sigma2)))

    def sample(self, z, rng):
        mu = self(z)
        return mu + ad.Tensor(np.sqrt(self.sigma2) * rng.standard_normal(mu.shape))

    def __call__(self, z, rng=None, eps=None):
        z = ad.as_tensor(z)
        _check_rows(z, self.latent_dim, "decoder input")
        return self.trunk(z)


class ImplicitDecoder:
    """x = net(concat(z, eps)) with eps ~ N(0, I)."""

    def __init__(self, net: Mlp, latent_dim: int, noise_dim: int):
        if net.dims[0] != latent_dim + noise_dim:
            raise ShapeError("implicit decoder input must be latent_dim + noise_dim",
                             (net.dims[0],), (latent_dim + noise_dim,))
        self.net = net
        self.latent_dim = latent_dim
        self.noise_dim = noise_dim
        self.data_dim = net.dims[-1]

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters("decoder.")

    def sample(self, z, rng):
        return self(z, rng)

    def __call__(self, z, rng=None, eps=None):
        z = ad.as_tensor(z)
        _check_rows(z, self.latent_dim, "decoder input")
        noise = _noise(rng, z.shape[0], self.noise_dim, eps)
        return self.net(ad.concat([z, ad.Tensor(noise)]))


class Discriminator:
    """Real-valued critic on (x, z) pairs.

    With ``clamp_bound`` set, outputs pass through ``bound * tanh(d / bound)``.
    """

    def __init__(self, net: Mlp, data_dim: int, latent_dim: int, clamp_bound=None, name="disc"):
        if net.dims[0] != data_dim + latent_dim or net.dims[-1] != 1:
            raise ShapeError("discriminator must map data_dim + latent_dim -> 1",
                             (net.dims[0], net.dims[-1]), (data_dim + latent_dim, 1))
        if clamp_bound is not None and clamp_bound <= 0:
            raise ConfigError("clamp_bound", "must be positive or None")
        self.net = net
        self.data_dim = data_dim
        self.latent_dim = latent_dim
        self.clamp_bound = clamp_bound
        self.name = name

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters(f"{self.name}.")

    def __call__(self, x, z):
        return discriminate(self, x, z)


def discriminate(d, x, z):
    x, z = ad.as_tensor(x), ad.as_tensor(z)
    _check_rows(x, d.data_dim, "discriminator x")
    _check_rows(z, d.latent_dim, "discriminator z")
    if x.shape[0] != z.shape[0]:
        raise ShapeError("x and z row counts differ", x.shape, z.shape)
    out = ad.reshape(d.net(ad.concat([x, z])), (x.shape[0],))
    if d.clamp_bound is not None:
        out = ad.tanh(out * (1.0 / d.clamp_bound)) * d.clamp_bound
    return out


Encoder = Union[GaussianEncoder, ImplicitEncoder]
Decoder = Union[GaussianDecoder, ImplicitDecoder]


@dataclass
class ModelVariant:
    encoder: Encoder
    decoder: Decoder
    inference_disc: Optional[Discriminator] = None
    generative_disc: Optional[Discriminator] = None

    def __post_init__(self):
        if self.encoder.latent_dim != self.decoder.latent_dim:
            raise ShapeError("encoder and decoder latent widths differ",
                             (self.encoder.latent_dim,), (self.decoder.latent_dim,))
        if self.encoder.data_dim != self.decoder.data_dim:
            raise ShapeError("encoder and decoder data widths differ",
                             (self.encoder.data_dim,), (self.decoder.data_dim,))
        if isinstance(self.encoder, ImplicitEncoder) and self.inference_disc is None:
            raise AdvaeError("an implicit encoder requires an inference discriminator")
        if isinstance(self.decoder, ImplicitDecoder) and self.generative_disc is None:
            raise AdvaeError("an implicit decoder requires a generative discriminator")
        for d in (self.inference_disc, self.generative_disc):
            if d is not None and (d.data_dim, d.latent_dim) != (self.data_dim, self.latent_dim):
                raise ShapeError("discriminator widths do not match the model",
                                 (d.data_dim, d.latent_dim), (self.data_dim, self.latent_dim))

    @property
    def data_dim(self):
        return self.encoder.data_dim

    @property
    def latent_dim(self):
        return self.encoder.latent_dim

    @property
    def kind(self):
        enc = isinstance(self.encoder, ImplicitEncoder)
        dec = isinstance(self.decoder, ImplicitDecoder)
        return {(False, False): "gaussian", (True, False): "implicit-encoder",
                (False, True): "implicit-decoder", (True, True): "full"}[(enc, dec)]

    def generator_named_parameters(self):
        return list(self.encoder.named_parameters()) + list(self.decoder.named_parameters())

    def named_parameters(self):
        out = self.generator_named_parameters()
        for d in (self.inference_disc, self.generative_disc):
            if d is not None:
                out += list(d.named_parameters())
        return out


def encode(v, x, rng, eps=None):
    return v.encoder(x, rng, eps)


def decode(v, z, rng, eps=None):
    return v.decoder(z, rng, eps)


def build_variant(kind, data_dim, latent_dim, *, enc_noise_dim=None, dec_noise_dim=None,
                  gen_hidden=(64, 64), disc_hidden=(128, 128), activation="relu",
                  clamp_bound=30.0, sigma2=1.0, seed=0):
    """Construct a freshly initialized variant.

    Each network draws from its own child seed, so e.g. the encoder weights
    for a given seed are the same whichever variant is built.
    """
    if kind not in VARIANTS:
        raise ConfigError("variant", f"unknown variant {kind!r}; expected one of {VARIANTS}")
    enc_noise_dim = latent_dim if enc_noise_dim is None else enc_noise_dim
    dec_noise_dim = data_dim if dec_noise_dim is None else dec_noise_dim
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    gen_hidden, disc_hidden = list(gen_hidden), list(disc_hidden)
    implicit_enc = kind in ("implicit-encoder", "full")
    implicit_dec = kind in ("implicit-decoder", "full")

    if implicit_enc:
        net = init_mlp([data_dim + enc_noise_dim, *gen_hidden, latent_dim], activation, rng=rngs[0])
        encoder = ImplicitEncoder(net, data_dim, enc_noise_dim)
    else:
        net = init_mlp([data_dim, *gen_hidden, 2 * latent_dim], activation, rng=rngs[0])
        encoder = GaussianEncoder(net, latent_dim)
    if implicit_dec:
        net = init_mlp([latent_dim + dec_noise_dim, *gen_hidden, data_dim], activation, rng=rngs[1])
        decoder = ImplicitDecoder(net, latent_dim, dec_noise_dim)
    else:
        net = init_mlp([latent_dim, *gen_hidden, data_dim], activation, rng=rngs[1])
        decoder = GaussianDecoder(net, sigma2)

    def disc(rng, name):
        net = init_mlp([data_dim + latent_dim, *disc_hidden, 1], activation, rng=rng)
        return Discriminator(net, data_dim, latent_dim, clamp_bound, name)

    return ModelVariant(
        encoder, decoder,
        disc(rngs[2], "inference_disc") if implicit_enc else None,
        disc(rngs[3], "generative_disc") if implicit_dec else None,
    )


def variant_sections(v):
    secs = []
    if isinstance(v.encoder, ImplicitEncoder):
        secs.append(mlp_section("encoder", v.encoder.net, kind="implicit_encoder",
                                data_dim=v.data_dim, noise_dim=v.encoder.noise_dim))
    else:
        secs.append(mlp_section("encoder", v.encoder.trunk, kind="gaussian_encoder",
                                latent_dim=v.latent_dim))
    if isinstance(v.decoder, ImplicitDecoder):
        secs.append(mlp_section("decoder", v.decoder.net, kind="implicit_decoder",
                                latent_dim=v.latent_dim, noise_dim=v.decoder.noise_dim))
    else:
        secs.append(mlp_section("decoder", v.decoder.trunk, kind="gaussian_decoder",
                                sigma2=v.decoder.sigma2))
    for d in (v.inference_disc, v.generative_disc):
        if d is not None:
            secs.append(mlp_section(d.name, d.net, kind="discriminator", data_dim=d.data_dim,
                                    latent_dim=d.latent_dim, clamp_bound=d.clamp_bound))
    return secs


def variant_from_sections(sections):
    enc_sec, dec_sec = sections["encoder"], sections["decoder"]
    if enc_sec.info["kind"] == "implicit_encoder":
        encoder = ImplicitEncoder(mlp_from_section(enc_sec), enc_sec.info["data_dim"],
                                  enc_sec.info["noise_dim"])
    else:
        encoder = GaussianEncoder(mlp_from_section(enc_sec), enc_sec.info["latent_dim"])
    if dec_sec.info["kind"] == "implicit_decoder":
        decoder = ImplicitDecoder(mlp_from_section(dec_sec), dec_sec.info["latent_dim"],
                                  dec_sec.info["noise_dim"])
    else:
        decoder = GaussianDecoder(mlp_from_section(dec_sec), dec_sec.info["sigma2"])
    discs = {}
    for name in ("inference_disc", "generative_disc"):
        if name in sections:
            s = sections[name]
            discs[name] = Discriminator(mlp_from_section(s), s.info["data_dim"],
                                        s.info["latent_dim"], s.info["clamp_bound"], name)
    return ModelVariant(encoder, decoder, discs.get("inference_disc"), discs.get("generative_disc"))


def sample_model(v, n, rng):
    """Generate ``n`` rows: z ~ N(0, I), then decode (Gaussian decoders return the mean)."""
    z = rng.standard_normal((n, v.latent_dim))
    with frozen([p for _, p in v.generator_named_parameters()]):
        return v.decoder(z, rng).data.copy()
