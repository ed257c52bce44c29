"""Alternating minimax training and the Gaussian-VAE baseline loop."""
import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from . import autodiff as ad
from . import games
from .data import Dataset, evaluate_samples, sample_dataset
from .distributions import gaussian_nll_l2, kl_gaussian_prior, sample_reparam
from .errors import AdvaeError, ConfigError, NumericError
from .models import (Discriminator, GaussianDecoder, GaussianEncoder, ImplicitDecoder, ImplicitEncoder,
                     ModelVariant, VARIANTS, build_variant, sample_model,
                     variant_from_sections, variant_sections)
from .nn import Adam, adam_section, frozen, grad_norm, init_mlp, load_adam_section, \
    read_checkpoint, write_checkpoint

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRICS_HEADER = ["step", "game", "value_estimate", "stderr", "grad_norm_enc", "grad_norm_dec",
                  "grad_norm_disc_inf", "grad_norm_disc_gen", "elbo_baseline"]


@dataclass
class TrainConfig:
    schema_version: int = SCHEMA_VERSION
    variant: str = "full"
    dataset: str = "mixture_of_gaussians_2d"
    dataset_params: dict = field(default_factory=dict)
    train_size: int = 10000
    latent_dim: int = 2
    enc_noise_dim: Optional[int] = None
    dec_noise_dim: Optional[int] = None
    gen_hidden: list = field(default_factory=lambda: [64, 64])
    disc_hidden: list = field(default_factory=lambda: [128, 128])
    activation: str = "relu"
    disc_steps_per_gen_step: int = 5
    lr_encoder: float = 1e-4
    lr_decoder: float = 1e-4
    lr_inference_disc: float = 1e-4
    lr_generative_disc: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 128
    total_steps: int = 10000
    seed: int = 0
    clamp_bound: Optional[float] = 30.0
    sigma2: float = 1.0
    alternate_games: bool = False
    metrics_every: int = 10
    checkpoint_every: int = 1000
    eval_samples: int = 2000
    out_dir: str = "runs/default"

    @property
    def data_dim(self):
        return Dataset(self.dataset, dict(self.dataset_params)).data_dim

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version}")
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}")
        Dataset(self.dataset, dict(self.dataset_params))
        for name in ("train_size", "latent_dim", "disc_steps_per_gen_step", "batch_size",
                     "metrics_every", "checkpoint_every", "eval_samples"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if not isinstance(self.total_steps, int) or self.total_steps < 0:
            raise ConfigError("total_steps", f"must be a nonnegative integer, got {self.total_steps!r}")
        for name in ("enc_noise_dim", "dec_noise_dim"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value <= 0):
                raise ConfigError(name, "must be a positive integer or null")
        for name in ("gen_hidden", "disc_hidden"):
            widths = getattr(self, name)
            if not isinstance(widths, list) or not all(isinstance(w, int) and w > 0 for w in widths):
                raise ConfigError(name, "must be a list of positive integers")
        for name in ("lr_encoder", "lr_decoder", "lr_inference_disc", "lr_generative_disc"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "learning rate must be nonnegative")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("beta1" if not 0 <= self.beta1 < 1 else "beta2", "must lie in [0, 1)")
        if self.clamp_bound is not None and not self.clamp_bound > 0:
            raise ConfigError("clamp_bound", "must be positive or null")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2", "must be positive")
        if self.activation not in ("relu", "tanh", "softplus"):
            raise ConfigError("activation", "must be relu, tanh or softplus")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        if "schema_version" not in raw:
            raise ConfigError("schema_version", "missing")
        return cls(**raw)

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(raw)

    def config_hash(self):
        """SHA-256 of the canonical config, excluding the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class MetricsRecord:
    step: int
    rows: list
    extras: dict = field(default_factory=dict)


class TrainingAborted(NumericError):
    def __init__(self, step, cause, last_metrics=None):
        self.step = step
        self.cause = cause
        self.last_metrics = last_metrics
        super().__init__(f"numeric abort at step {step}: {cause}")


@dataclass
class TrainState:
    variant: ModelVariant
    optimizers: dict
    rng: np.random.Generator
    step: int = 0
    disc_updates: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    disc_steps_per_gen_step: int = 5
    alternate_games: bool = False


def init_state(config, variant=None):
    variant = variant or build_variant(
        config.variant, config.data_dim, config.latent_dim,
        enc_noise_dim=config.enc_noise_dim, dec_noise_dim=config.dec_noise_dim,
        gen_hidden=config.gen_hidden, disc_hidden=config.disc_hidden,
        activation=config.activation, clamp_bound=config.clamp_bound,
        sigma2=config.sigma2, seed=config.seed)
    b = dict(beta1=config.beta1, beta2=config.beta2)
    opts = {
        "encoder": Adam(variant.encoder.named_parameters(), config.lr_encoder, **b),
        "decoder": Adam(variant.decoder.named_parameters(), config.lr_decoder, **b),
    }
    if variant.inference_disc is not None:
        opts["inference_disc"] = Adam(variant.inference_disc.named_parameters(),
                                      config.lr_inference_disc, **b)
    if variant.generative_disc is not None:
        opts["generative_disc"] = Adam(variant.generative_disc.named_parameters(),
                                       config.lr_generative_disc, **b)
    train_seed = np.random.SeedSequence(config.seed).spawn(6)[5]
    return TrainState(variant, opts, np.random.default_rng(train_seed),
                      disc_updates={k: 0 for k in opts if k.endswith("_disc")},
                      disc_steps_per_gen_step=config.disc_steps_per_gen_step,
                      alternate_games=config.alternate_games)


def _check_finite(loss, what):
    if not np.isfinite(loss.item()):
        raise NumericError(f"non-finite {what}", value=loss.item())


def _apply(optimizers):
    """Step several optimizers, refusing all of them if any gradient is bad."""
    for opt in optimizers:
        for name, p in opt.named_params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError("non-finite gradient", param=name)
    for opt in optimizers:
        for _, p in opt.named_params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()


def _disc_update(opt, loss):
    _check_finite(loss, "discriminator loss")
    opt.zero_grad()
    ad.backward(loss)
    _apply([opt])
    return grad_norm(opt.params)


def _encode(v, x, rng):
    """Posterior sample plus the closed-form KL term when the encoder is Gaussian."""
    if isinstance(v.encoder, GaussianEncoder):
        q = v.encoder.distribution(x)
        z = sample_reparam(q, rng.standard_normal((x.shape[0], v.latent_dim)))
        return z, ad.mean(kl_gaussian_prior(q))
    return v.encoder(x, rng), None


def _posterior_loss(v, x, z, kl):
    if kl is not None:
        return kl
    return games.inference_generator_loss(v.inference_disc, x, z)


def _reconstruction_loss(v, x, z, rng):
    if isinstance(v.decoder, GaussianDecoder):
        return gaussian_nll_l2(x, v.decoder(z), v.decoder.sigma2)
    x_fake = v.decoder(z, rng)
    return games.generative_generator_loss(v.generative_disc, z, x_fake, x_real=x)


def train_step_adversarial(s: TrainState, batch):
    """k critic ascent steps per active game, then one generator descent step."""
    v, rng, opts = s.variant, s.rng, s.optimizers
    if v.kind == "gaussian":
        raise AdvaeError("the Gaussian variant has no games; use train_step_baseline")
    x = ad.Tensor(batch)
    n = x.shape[0]
    gen_params = [p for _, p in v.generator_named_parameters()]
    values = {}
    norms = {"inference_disc": None, "generative_disc": None}

    for _ in range(s.disc_steps_per_gen_step):
        with frozen(gen_params):
            z, _ = _encode(v, x, rng)
            z = z.detach()
            if v.inference_disc is not None:
                z_prior = ad.Tensor(rng.standard_normal((n, v.latent_dim)))
                val = games.inference_value(v.inference_disc, x, z, z_prior)
                norms["inference_disc"] = _disc_update(opts["inference_disc"], -val.objective)
                s.disc_updates["inference_disc"] += 1
                values["inference"] = val
            if v.generative_disc is not None:
                x_fake = v.decoder(z, rng).detach()
                val = games.generative_value(v.generative_disc, z, x, x_fake)
                norms["generative_disc"] = _disc_update(opts["generative_disc"], -val.objective)
                s.disc_updates["generative_disc"] += 1
                values["generative"] = val

    critics = [d for d in (v.inference_disc, v.generative_disc) if d is not None]
    critic_params = [p for d in critics for p in d.parameters()]
    with frozen(critic_params):
        if s.alternate_games:
            z, kl = _encode(v, x, rng)
            loss = _posterior_loss(v, x, z, kl)
            _check_finite(loss, "posterior loss")
            opts["encoder"].zero_grad()
            ad.backward(loss)
            _apply([opts["encoder"]])
            z, _ = _encode(v, x, rng)
            loss = _reconstruction_loss(v, x, z, rng)
        else:
            z, kl = _encode(v, x, rng)
            loss = _posterior_loss(v, x, z, kl) + _reconstruction_loss(v, x, z, rng)
        _check_finite(loss, "generator loss")
        opts["encoder"].zero_grad()
        opts["decoder"].zero_grad()
        ad.backward(loss)
        enc_norm = grad_norm(opts["encoder"].params)
        dec_norm = grad_norm(opts["decoder"].params)
        _apply([opts["encoder"], opts["decoder"]])

    rows = []
    for game, disc in (("inference", "inference_disc"), ("generative", "generative_disc")):
        if game in values:
            rows.append({"game": game, "value_estimate": values[game].value,
                         "stderr": values[game].stderr, "grad_norm_enc": enc_norm,
                         "grad_norm_dec": dec_norm, f"grad_norm_disc_{game[:3]}": norms[disc]})
    record = MetricsRecord(s.step, rows, {"generator_loss": loss.item()})
    s.step += 1
    return record


def elbo_terms(v, x, rng):
    """(elbo, reconstruction nll, kl) tensors for a fully Gaussian variant."""
    if not (isinstance(v.encoder, GaussianEncoder) and isinstance(v.decoder, GaussianDecoder)):
        raise AdvaeError("the baseline ELBO needs Gaussian encoder and decoder")
    x = ad.as_tensor(x)
    z, kl = _encode(v, x, rng)
    nll = gaussian_nll_l2(x, v.decoder(z), v.decoder.sigma2)
    return -(nll + kl), nll, kl


def train_step_baseline(s: TrainState, batch):
    """One Adam step on -ELBO = reconstruction NLL + closed-form KL."""
    v, opts = s.variant, s.optimizers
    elbo, nll, kl = elbo_terms(v, ad.Tensor(batch), s.rng)
    loss = -elbo
    _check_finite(loss, "negative ELBO")
    opts["encoder"].zero_grad()
    opts["decoder"].zero_grad()
    ad.backward(loss)
    enc_norm = grad_norm(opts["encoder"].params)
    dec_norm = grad_norm(opts["decoder"].params)
    _apply([opts["encoder"], opts["decoder"]])
    row = {"game": "baseline", "grad_norm_enc": enc_norm, "grad_norm_dec": dec_norm,
           "elbo_baseline": elbo.item()}
    record = MetricsRecord(s.step, [row], {"elbo": elbo.item(), "reconstruction": nll.item(),
                                           "kl": kl.item()})
    s.step += 1
    return record


def train_step(s, batch):
    if s.variant.kind == "gaussian":
        return train_step_baseline(s, batch)
    return train_step_adversarial(s, batch)


def evaluate_elbo(v, x, seed=0):
    """ELBO on fixed data with fixed noise (no graph retained)."""
    with frozen([p for _, p in v.named_parameters()]):
        elbo, _, _ = elbo_terms(v, x, np.random.default_rng(seed))
    return elbo.item()


def fit_inference_disc(disc, sample_x, sample_z_q, sample_z_p, steps, batch_size, lr, rng,
                       beta1=0.5):
    """Train a critic alone on the inference game with the generators held fixed.

    ``sample_*`` are callables ``(n, rng) -> array``; ``sample_z_q`` also
    receives the x rows it must pair with. Returns the final ValueEstimate.
    """
    opt = Adam(disc.named_parameters(), lr, beta1=beta1)
    val = None
    for _ in range(steps):
        x = sample_x(batch_size, rng)
        val = games.inference_value(disc, x, sample_z_q(x, rng), sample_z_p(batch_size, rng))
        _disc_update(opt, -val.objective)
    return val


# ---------------------------------------------------------------------------
# run loop


def _fmt(value):
    return "" if value is None else repr(float(value))


def metrics_lines(record):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for row in record.rows:
        writer.writerow([record.step] + [row.get("game", "")] +
                        [_fmt(row.get(k)) for k in METRICS_HEADER[2:]])
    return out.getvalue()


def provenance(config):
    return {"artifact": "advae", "version": __version__, "config_sha256": config.config_hash(),
            "seed": config.seed}


def state_sections(s):
    secs = variant_sections(s.variant)
    for name, opt in s.optimizers.items():
        secs.append(adam_section(f"adam.{name}", opt))
    return secs


def save_state(path, s, config):
    meta = {"config": config.to_dict(), "provenance": provenance(config),
            "rng_state": s.rng.bit_generator.state, "disc_updates": s.disc_updates}
    write_checkpoint(path, state_sections(s), step=s.step, meta=meta)


def load_state(path, config=None):
    """Rebuild a TrainState (weights, moments, RNG, counters) from a checkpoint."""
    manifest, sections = read_checkpoint(path)
    meta = manifest["meta"]
    config = config or TrainConfig.from_dict(meta["config"])
    variant = variant_from_sections(sections)
    s = init_state(config, variant)
    for name, opt in s.optimizers.items():
        load_adam_section(opt, sections[f"adam.{name}"])
    s.rng.bit_generator.state = meta["rng_state"]
    s.step = int(manifest["step"])
    s.disc_updates = dict(meta.get("disc_updates", s.disc_updates))
    return s


def load_variant(path):
    _, sections = read_checkpoint(path)
    return variant_from_sections(sections)


def training_data(config):
    ds = Dataset(config.dataset, dict(config.dataset_params))
    data_seed = np.random.SeedSequence(config.seed).spawn(6)[4]
    return sample_dataset(ds, config.train_size, rng=np.random.default_rng(data_seed))


def _prepare_out_dir(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise OSError(f"output directory {out_dir!r} is not writable: {exc}") from exc


def run(config: TrainConfig, resume_from=None, on_record=None):
    """Train per ``config``; writes metrics.csv and checkpoints under ``config.out_dir``.

    Returns the final TrainState. With ``resume_from`` the state (including
    RNG) is restored from that checkpoint and training continues to
    ``config.total_steps``, appending to an existing metrics.csv.
    """
    config.validate()
    _prepare_out_dir(config.out_dir)
    s = load_state(resume_from, config) if resume_from else init_state(config)
    data = training_data(config)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    prov = provenance(config)
    append = bool(resume_from) and os.path.exists(metrics_path)
    with open(metrics_path, "a" if append else "w", newline="") as fh:
        if not append:
            fh.write(f"# advae {prov['version']} config_sha256={prov['config_sha256']} "
                     f"seed={config.seed}\n")
            fh.write(",".join(METRICS_HEADER) + "\n")
        last = None
        while s.step < config.total_steps:
            step = s.step
            batch = data[s.rng.integers(0, data.shape[0], config.batch_size)]
            try:
                record = train_step(s, batch)
            except NumericError as exc:
                raise TrainingAborted(step, exc, last) from exc
            last = record
            if step % config.metrics_every == 0:
                s.metrics.append(record)
                fh.write(metrics_lines(record))
                if on_record is not None:
                    on_record(record)
            if s.step % config.checkpoint_every == 0:
                save_state(os.path.join(config.out_dir, f"checkpoint_{s.step:07d}.ckpt"), s, config)
    save_state(os.path.join(config.out_dir, "final.ckpt"), s, config)
    return s


def _eval_streams(seed):
    # children 0-5 belong to init_state/training_data; 6 and 7 are for evaluation
    kids = np.random.SeedSequence(seed).spawn(8)
    return np.random.default_rng(kids[6]), np.random.default_rng(kids[7])


def held_out_eval(v, dataset, n, seed, sample_path=None, provenance=None):
    """Sample ``n`` rows from the model and score them against ``n`` fresh dataset rows.

    Returns (EvalReport, samples, reference). The streams depend only on
    ``seed``, so models evaluated with one seed share the reference set.
    """
    ref_rng, model_rng = _eval_streams(seed)
    reference = sample_dataset(dataset, n, rng=ref_rng)
    samples = sample_model(v, n, model_rng)
    report = evaluate_samples(samples, dataset, reference, seed, sample_path, provenance)
    return report, samples, reference


def probe_inference_value(v, x, seed=0, steps=800, batch_size=256, lr=1e-3, hidden=(64, 64),
                          n_eval=5000):
    """Estimate E_x KL(q(z|x) || p(z)) for a frozen encoder with a freshly fitted critic.

    The training critic lags the encoder, so its own value estimate is not
    comparable across steps; a probe trained to convergence on the current
    encoder is. The result is a lower bound up to Monte-Carlo error.
    """
    rng = np.random.default_rng(seed)
    dims = [v.data_dim + v.latent_dim, *hidden, 1]
    disc = Discriminator(init_mlp(dims, "relu", rng=rng), v.data_dim, v.latent_dim, None, "probe")
    params = [p for _, p in v.generator_named_parameters()]

    def sample_z_q(xb, r):
        with frozen(params):
            return v.encoder(xb, r).data

    fit_inference_disc(disc, lambda n, r: x[r.integers(0, len(x), n)], sample_z_q,
                       lambda n, r: r.standard_normal((n, v.latent_dim)), steps, batch_size, lr, rng)
    r = np.random.default_rng(seed + 1)
    xe = x[:n_eval]
    return games.inference_value(disc, xe, sample_z_q(xe, r),
                                 r.standard_normal((len(xe), v.latent_dim))).value
