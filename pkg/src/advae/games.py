"""The two adversarial games replacing the Gaussian assumptions of a VAE.

Inference game (posterior side). A critic D(x, z) maximizes

    V_inf = E_x[ E_{z~q(z|x)}(1 - D(x, z)) - E_{z~p(z)} exp(-D(x, z)) ]

whose pointwise optimum is D* = log p(z) - log q(z|x), where V_inf equals
E_x KL(q(z|x) || p(z)). The encoder minimizes V_inf.

Generative game (output side). A critic D(x, z) maximizes

    V_gen = E_z[ E_{x~data} D(x, z) - E_{x~p(x|z)} exp(D(x, z) - 1) ]

whose optimum is D* = 1 + log p_data(x) - log p(x|z), where V_gen equals the
forward KL(p_data || p(x|z)). Encoder and decoder minimize V_gen.

Pairing convention: real x is paired with the z encoded from it, decoder
samples with the z that produced them, and prior draws with the x they
replace the posterior sample of.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .distributions import mc_kl_estimate
from .errors import AdvaeError, DomainError, NumericError
from .models import Discriminator, ModelVariant, discriminate
from .nn import frozen

# exp overflows float64 just above this
EXP_LIMIT = 709.0


@dataclass(frozen=True)
class GameSpec:
    kind: str
    payoff: Callable
    d_star: Callable
    divergence_kind: str


def _inference_payoff(a, b, d):
    return a * (1.0 - d) - b * np.exp(-d)


def _generative_payoff(a, b, d):
    return a * d - b * np.exp(d - 1.0)


INFERENCE = GameSpec("inference", _inference_payoff,
                     lambda a, b: math.log(b / a), "reverse_kl")
GENERATIVE = GameSpec("generative", _generative_payoff,
                      lambda a, b: 1.0 + math.log(a / b), "direct_kl")
GAMES = {"inference": INFERENCE, "generative": GENERATIVE}


def game_spec(kind):
    try:
        return GAMES[kind]
    except KeyError:
        raise ValueError(f"unknown game kind {kind!r}") from None


def scalar_maximizer(kind, a, b):
    """Closed-form argmax over d of the pointwise payoff.

    inference:  a(1 - d) - b exp(-d)  ->  log(b / a)
    generative: a d - b exp(d - 1)    ->  1 + log(a / b)
    """
    if not (a > 0 and b > 0):
        raise DomainError(f"maximizer needs a > 0 and b > 0, got a={a}, b={b}")
    return game_spec(kind).d_star(float(a), float(b))


@dataclass
class ValueEstimate:
    value: float
    stderr: float
    n_samples: int
    objective: Optional[ad.Tensor] = field(default=None, repr=False)
    terms: Optional[np.ndarray] = field(default=None, repr=False)


def _critic(d, x, z):
    if isinstance(d, Discriminator):
        return discriminate(d, x, z)
    out = d(_arr(x), _arr(z))
    return out if isinstance(out, ad.Tensor) else ad.Tensor(out)


def _arr(t):
    return t.data if isinstance(t, ad.Tensor) else np.asarray(t, dtype=np.float64)


def _check_exponent(exponent, where):
    top = float(np.max(exponent.data))
    if not np.isfinite(top) or top > EXP_LIMIT:
        raise NumericError(f"exp overflow in {where}", max_abs_d=float(np.max(np.abs(exponent.data))))


def _estimate(terms):
    vals = terms.data
    n = vals.size
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return ValueEstimate(float(vals.mean()), stderr, n, ad.mean(terms), vals)


def inference_value(d, x_batch, z_q, z_p):
    """Monte-Carlo estimate of V_inf with per-pair terms (1 - D(x,z_q)) - exp(-D(x,z_p))."""
    d_q = _critic(d, x_batch, z_q)
    d_p = _critic(d, x_batch, z_p)
    neg = -d_p
    _check_exponent(neg, "inference value")
    return _estimate((1.0 - d_q) - ad.exp(neg))


def generative_value(d, z_batch, x_real, x_fake):
    """Monte-Carlo estimate of V_gen with per-pair terms D(x_real,z) - exp(D(x_fake,z) - 1)."""
    d_real = _critic(d, x_real, z_batch)
    shifted = _critic(d, x_fake, z_batch) - 1.0
    _check_exponent(shifted, "generative value")
    return _estimate(d_real - ad.exp(shifted))


def optimal_inference_disc(log_p_z, log_q_z_given_x):
    """D*(x, z) = log p(z) - log q(z|x); evaluators take numpy arrays."""
    def d_star(x, z):
        return np.asarray(log_p_z(z)) - np.asarray(log_q_z_given_x(z, x))
    return d_star


def optimal_generative_disc(log_p_data, log_p_model):
    """D*(x, z) = 1 + log p_data(x) - log p_model(x|z)."""
    def d_star(x, z):
        return 1.0 + np.asarray(log_p_data(x)) - np.asarray(log_p_model(x, z))
    return d_star


def _params(d):
    return d.parameters() if isinstance(d, Discriminator) else []


def inference_generator_loss(d, x_batch, z_q):
    """mean(1 - D(x, z_q)) with the critic frozen; gradients reach z_q only."""
    with frozen(_params(d)):
        return ad.mean(1.0 - _critic(d, x_batch, z_q))


def generative_generator_loss(d, z_batch, x_fake, x_real=None):
    """-mean(exp(D(x_fake, z) - 1)) with the critic frozen.

    Passing ``x_real`` adds the ``mean(D(x_real, z))`` term, which depends on
    the encoder through ``z`` (it is constant for the decoder).
    """
    with frozen(_params(d)):
        shifted = _critic(d, x_fake, z_batch) - 1.0
        _check_exponent(shifted, "generative generator loss")
        loss = -ad.mean(ad.exp(shifted))
        if x_real is not None:
            loss = loss + ad.mean(_critic(d, x_real, z_batch))
    return loss


# ---------------------------------------------------------------------------
# verification against analytic densities


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return -0.5 * (math.log(2.0 * math.pi * self.var) + (x - self.mean) ** 2 / self.var)

    def sample(self, n, rng):
        return (self.mean + math.sqrt(self.var) * rng.standard_normal(n)).reshape(n, 1)


def kl_1d(p, q):
    """Closed-form KL(p || q) for two Gaussian1D."""
    return 0.5 * (math.log(q.var / p.var) + (p.var + (p.mean - q.mean) ** 2) / q.var - 1.0)


@dataclass
class RecoveryReport:
    case_id: str
    kind: str
    estimate: float
    stderr: float
    oracle: float
    zscore: float
    mc_kl: float
    mc_kl_stderr: float
    zscore_mc: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def _zscore(diff, se):
    if diff == 0.0:
        return 0.0
    return diff / se if se > 0 else math.copysign(math.inf, diff)


def kl_recovery_check(kind, first, second, n, rng, case_id=None, threshold=4.0):
    """Evaluate a game at its closed-form optimum and compare with the KL it should equal.

    inference:  first = q (posterior), second = p (prior); target KL(q || p).
    generative: first = p_data, second = p_model;          target KL(p_data || p_model).

    The z-score against the closed-form KL uses the value's stderr; the one
    against the Monte-Carlo KL (independent draws) pools both stderrs. Passes
    iff both are within ``threshold``.
    """
    x_dummy = np.zeros((n, 1))
    if kind == "inference":
        q, p = first, second
        d_star = optimal_inference_disc(p.log_prob, lambda z, x: q.log_prob(z))
        z_q, z_p = q.sample(n, rng), p.sample(n, rng)
        est = inference_value(d_star, x_dummy, z_q, z_p)
        mc, mc_se = mc_kl_estimate(p.log_prob, q.log_prob, q.sample(n, rng))
        exact = kl_1d(q, p)
    elif kind == "generative":
        p_data, p_model = first, second
        d_star = optimal_generative_disc(p_data.log_prob, lambda x, z: p_model.log_prob(x))
        x_real, x_fake = p_data.sample(n, rng), p_model.sample(n, rng)
        est = generative_value(d_star, x_dummy, x_real, x_fake)
        mc, mc_se = mc_kl_estimate(p_model.log_prob, p_data.log_prob, p_data.sample(n, rng))
        exact = kl_1d(p_data, p_model)
    else:
        raise ValueError(f"unknown game kind {kind!r}")
    z_exact = _zscore(est.value - exact, est.stderr)
    z_mc = _zscore(est.value - mc, math.hypot(est.stderr, mc_se))
    passed = abs(z_exact) <= threshold and abs(z_mc) <= threshold
    return RecoveryReport(case_id or kind, kind, est.value, est.stderr, exact, z_exact,
                          mc, mc_se, z_mc, bool(passed))


def perturbation_gap(kind, first, second, delta, n, rng):
    """Paired Monte-Carlo estimate of V(D*) - V(D* + delta) and its stderr.

    Analytic gap: exp(-delta) - 1 + delta (inference), exp(delta) - 1 - delta
    (generative); both are >= 0.
    """
    x_dummy = np.zeros((n, 1))
    if kind == "inference":
        q, p = first, second
        d_star = optimal_inference_disc(p.log_prob, lambda z, x: q.log_prob(z))
        a, b = q.sample(n, rng), p.sample(n, rng)
        best = inference_value(d_star, x_dummy, a, b)
        moved = inference_value(lambda x, z: d_star(x, z) + delta, x_dummy, a, b)
        analytic = math.exp(-delta) - 1.0 + delta
    else:
        p_data, p_model = first, second
        d_star = optimal_generative_disc(p_data.log_prob, lambda x, z: p_model.log_prob(x))
        a, b = p_data.sample(n, rng), p_model.sample(n, rng)
        best = generative_value(d_star, x_dummy, a, b)
        moved = generative_value(lambda x, z: d_star(x, z) + delta, x_dummy, a, b)
        analytic = math.exp(delta) - 1.0 - delta
    diff = best.terms - moved.terms
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n)), analytic


# ---------------------------------------------------------------------------
# model-level losses


@dataclass
class GameLosses:
    """Losses of one game on one batch.

    ``disc_loss`` is -V with generator outputs detached (gradients reach the
    critic only); ``gen_loss`` is the generator-side loss with the critic
    frozen (gradients reach encoder/decoder only).
    """

    disc_loss: ad.Tensor
    gen_loss: ad.Tensor
    value: ValueEstimate


def inference_game_losses(d, x, z, z_prior):
    value = inference_value(d, x, z.detach(), z_prior)
    return GameLosses(-value.objective, inference_generator_loss(d, x, z), value)


def generative_game_losses(d, x, z, x_fake):
    value = generative_value(d, z.detach(), x, x_fake.detach())
    return GameLosses(-value.objective, generative_generator_loss(d, z, x_fake, x_real=x), value)


def combined_objective(v: ModelVariant, batch, rng):
    """Both games on one batch: returns (inference GameLosses, generative GameLosses).

    The encoder receives gradients from both generator losses, the decoder
    only from the generative one.
    """
    if v.inference_disc is None or v.generative_disc is None:
        raise AdvaeError("combined objective needs both discriminators")
    x = ad.as_tensor(batch)
    z = v.encoder(x, rng)
    z_prior = ad.Tensor(rng.standard_normal((x.shape[0], v.latent_dim)))
    x_fake = v.decoder(z, rng)
    inf = inference_game_losses(v.inference_disc, x, z, z_prior)
    gen = generative_game_losses(v.generative_disc, x, z, x_fake)
    return inf, gen
