"""Synthetic datasets with known structure and sample-quality metrics."""
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels
from .errors import AdvaeError, ConfigError, ShapeError

DATASET_IDS = ("gaussian_1d", "mixture_of_gaussians_2d", "two_moons", "ring")

_DEFAULTS = {
    "gaussian_1d": {"mean": 0.0, "std": 1.0},
    "mixture_of_gaussians_2d": {"k": 8, "radius": 2.0, "sigma": 0.1, "weights": None},
    "two_moons": {"noise": 0.1},
    "ring": {"radius": 2.0, "noise": 0.1},
}


@dataclass
class Dataset:
    id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in DATASET_IDS:
            raise ConfigError("dataset", f"unknown dataset {self.id!r}; expected one of {DATASET_IDS}")
        unknown = set(self.params) - set(_DEFAULTS[self.id])
        if unknown:
            raise ConfigError("dataset_params", f"unknown parameters {sorted(unknown)} for {self.id}")
        self.params = {**_DEFAULTS[self.id], **self.params}
        if self.is_mixture:
            w = self.weights
            if len(w) != self.params["k"] or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ConfigError("dataset_params", "mixture weights must be k nonnegative values summing to 1")

    @property
    def data_dim(self):
        return 1 if self.id == "gaussian_1d" else 2

    @property
    def is_mixture(self):
        return self.id == "mixture_of_gaussians_2d"

    @property
    def weights(self):
        w = self.params["weights"]
        k = self.params["k"]
        return np.full(k, 1.0 / k) if w is None else np.asarray(w, dtype=np.float64)

    def component_means(self):
        if not self.is_mixture:
            raise AdvaeError(f"{self.id} is not a mixture dataset")
        k, r = self.params["k"], self.params["radius"]
        angles = 2.0 * np.pi * np.arange(k) / k
        return np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)

    def sample(self, n, rng):
        return sample_dataset(self, n, rng=rng)


def make_dataset(dataset_id, **params):
    return Dataset(dataset_id, params)


def sample_dataset(d, n, seed=None, rng=None):
    """Draw ``n`` rows; deterministic given ``seed`` (or the state of ``rng``)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    p = d.params
    if d.id == "gaussian_1d":
        return p["mean"] + p["std"] * rng.standard_normal((n, 1))
    if d.id == "mixture_of_gaussians_2d":
        comp = rng.choice(p["k"], size=n, p=d.weights)
        return d.component_means()[comp] + p["sigma"] * rng.standard_normal((n, 2))
    if d.id == "ring":
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = p["radius"] + p["noise"] * rng.standard_normal(n)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    # two_moons: upper arc centred at the origin, lower arc shifted to (1, 0.5)
    upper = rng.random(n) < 0.5
    t = rng.uniform(0.0, np.pi, n)
    x = np.where(upper, np.cos(t), 1.0 - np.cos(t))
    y = np.where(upper, np.sin(t), 0.5 - np.sin(t))
    return np.stack([x, y], axis=1) + p["noise"] * rng.standard_normal((n, 2))


def median_bandwidth(x, y, max_points=4000):
    """Median pairwise Euclidean distance of the pooled sample."""
    pooled = np.concatenate([x, y], axis=0)
    if pooled.shape[0] > max_points:
        pooled = pooled[:: int(math.ceil(pooled.shape[0] / max_points))]
    h = float(np.median(pdist(pooled)))
    return h if h > 0 else 1.0


def _order_key(a):
    return (a.shape, a.tobytes())


def mmd_rbf(x, y, bandwidth=None):
    """Unbiased MMD^2 with kernel exp(-||a - b||^2 / (2 h^2)); may be slightly negative.

    ``bandwidth=None`` uses the median heuristic. Arguments are put in a
    canonical order first, so ``mmd_rbf(x, y) == mmd_rbf(y, x)`` bit for bit.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError("samples must be 2-D with equal widths", x.shape, y.shape)
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ValueError("need at least two samples on each side")
    if _order_key(y) < _order_key(x):
        x, y, n, m = y, x, m, n
    h = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    sxx, syy, sxy = kernels.rbf_kernel_sums(x, y, 1.0 / (2.0 * h * h))
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)


def mode_coverage(samples, mixture):
    """Counts of samples whose nearest component mean is each mixture component."""
    if not isinstance(mixture, Dataset) or not mixture.is_mixture:
        raise AdvaeError("mode coverage needs a mixture dataset")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    k = mixture.params["k"]
    labels = kernels.nearest_center(samples, mixture.component_means())
    return np.bincount(labels, minlength=k).astype(np.int64)


@dataclass
class EvalReport:
    dataset: str
    n: int
    seed: int
    bandwidth: float
    mmd: float
    mmd_raw: float
    coverage: Optional[list] = None
    modes_covered: Optional[int] = None
    sample_path: Optional[str] = None
    provenance: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate_samples(samples, dataset, reference, seed, sample_path=None, provenance=None,
                     bandwidth=None):
    """Score model samples against held-out ``reference`` rows.

    The default bandwidth is the median heuristic on the reference alone, so
    reports for different models on the same reference share one kernel.
    """
    if bandwidth is None:
        bandwidth = median_bandwidth(reference[: len(reference) // 2], reference[len(reference) // 2:])
    raw = mmd_rbf(samples, reference, bandwidth)
    coverage = modes = None
    if dataset.is_mixture:
        counts = mode_coverage(samples, dataset)
        coverage, modes = counts.tolist(), int(np.count_nonzero(counts))
    return EvalReport(dataset.id, int(samples.shape[0]), int(seed), bandwidth, max(raw, 0.0), raw,
                      coverage, modes, sample_path, provenance or {})


def write_samples_csv(path, samples, dataset_id, seed, extra=""):
    header = f"dataset={dataset_id} seed={seed}" + (f" {extra}" if extra else "")
    np.savetxt(path, np.asarray(samples), delimiter=",", fmt="%.17g", header=header, comments="# ")


def read_samples_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
