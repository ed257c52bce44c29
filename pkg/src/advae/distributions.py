"""Analytic Gaussian densities, reparametrized sampling and closed-form KL terms."""
import math

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


class DiagonalGaussian:
    """N(mean, diag(exp(log_variance))); parameters may carry a leading batch axis."""

    def __init__(self, mean, log_variance):
        mean, log_variance = ad.as_tensor(mean), ad.as_tensor(log_variance)
        ad.broadcast_shape(mean.shape, log_variance.shape)
        if not (np.all(np.isfinite(mean.data)) and np.all(np.isfinite(log_variance.data))):
            raise ValueError("Gaussian parameters must be finite")
        self.mean = mean
        self.log_variance = log_variance

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def variance(self):
        return ad.exp(self.log_variance)

    def sample(self, n, rng):
        """Plain numpy draws (no graph), shape (n, d)."""
        eps = rng.standard_normal((n, self.dim))
        return self.mean.data + np.exp(0.5 * self.log_variance.data) * eps

    def log_prob(self, x):
        """Numpy convenience wrapper around ``log_density``."""
        return log_density(self, np.asarray(x, dtype=np.float64)).data


class StandardNormalPrior:
    def __init__(self, dim):
        if dim < 1:
            raise ValueError("prior dimension must be at least 1")
        self.dim = int(dim)

    def as_gaussian(self):
        return DiagonalGaussian(np.zeros(self.dim), np.zeros(self.dim))

    def sample(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def log_prob(self, x):
        return log_density(self, np.asarray(x, dtype=np.float64)).data


def sample_reparam(g, eps):
    """``mean + exp(log_variance / 2) * eps``; differentiable in both parameters."""
    eps = ad.as_tensor(eps)
    if eps.ndim != 2 or eps.shape[1] != g.dim:
        raise ShapeError("noise does not match Gaussian dimension", eps.shape, g.mean.shape)
    if g.mean.ndim == 2 and g.mean.shape[0] != eps.shape[0]:
        raise ShapeError("noise rows do not match batched parameters", eps.shape, g.mean.shape)
    return g.mean + ad.exp(g.log_variance * 0.5) * eps


def log_density(g, x):
    """Exact log N(x | mean, diag(var)), summed over the last axis."""
    if isinstance(g, StandardNormalPrior):
        g = g.as_gaussian()
    x = ad.as_tensor(x)
    if x.ndim < 1 or x.shape[-1] != g.dim:
        raise ShapeError("sample width does not match density dimension", x.shape, g.mean.shape)
    diff = x - g.mean
    per_coord = (diff * diff) / g.variance + g.log_variance + LOG_2PI
    return ad.sum(per_coord, axis=-1) * -0.5


def kl_gaussian_prior(g):
    """KL(g || N(0, I)) = 0.5 * sum(var + mean^2 - 1 - log var) over the last axis."""
    terms = g.variance + g.mean * g.mean - g.log_variance - 1.0
    return ad.sum(terms, axis=-1) * 0.5


def kl_gaussians_1d(mean_p, var_p, mean_q, var_q):
    """Closed-form KL(N(mean_p, var_p) || N(mean_q, var_q)) for scalars."""
    return 0.5 * (math.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / var_q - 1.0)


def gaussian_nll_l2(x, mu, sigma2):
    """Batch-averaged ``log((2 pi)^(n/2) sigma) + ||x - mu||^2 / (2 sigma^2)``.

    ``n`` is the data width. The normalizer uses a single ``sigma`` factor, so
    it equals the exact Gaussian negative log-likelihood only when
    ``sigma2 == 1`` or ``n == 1``; the difference is parameter-free.
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2", f"must be positive, got {sigma2}")
    x, mu = ad.as_tensor(x), ad.as_tensor(mu)
    if x.shape != mu.shape:
        raise ShapeError("data and mean shapes differ", x.shape, mu.shape)
    n = x.shape[-1]
    const = 0.5 * n * LOG_2PI + 0.5 * math.log(sigma2)
    diff = x - mu
    sq = ad.sum(diff * diff, axis=-1)
    return ad.mean(sq * (1.0 / (2.0 * sigma2)) + const)


def _values(v):
    return v.data if isinstance(v, ad.Tensor) else np.asarray(v, dtype=np.float64)


def mc_kl_estimate(log_p, log_q, samples_from_q):
    """Monte-Carlo KL(q || p): mean and standard error of log q(s) - log p(s)."""
    samples = _values(samples_from_q)
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    terms = _values(log_q(samples)) - _values(log_p(samples))
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(terms.size))
