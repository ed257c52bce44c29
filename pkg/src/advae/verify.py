"""Verification suites: closed forms vs numerical oracles, and gradient checks."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import games
from .distributions import DiagonalGaussian, log_density, sample_reparam
from .games import Gaussian1D
from .models import build_variant, discriminate
from .nn import init_mlp
from .oracles import golden_section_max
from .training import fit_inference_disc
from .models import Discriminator

SUITES = ("maximizers", "optimal-disc", "kl-recovery")
GRAD_SCOPES = ("autodiff", "models", "games")


@dataclass
class Case:
    case_id: str
    estimate: float
    stderr: float
    oracle: float
    zscore: object
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"case_id": self.case_id, "estimate": self.estimate, "stderr": self.stderr,
             "oracle": self.oracle, "zscore": self.zscore, "pass": bool(self.passed)}
        d.update(self.extra)
        return {k: _jsonable(v) for k, v in d.items()}


def _jsonable(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# maximizer lemmas


def random_pairs(n, rng, lo=0.1, hi=10.0):
    return rng.uniform(lo, hi, size=(n, 2))


def maximizer_suite(n_cases=200, seed=0, grid_points=10_000, tol=1e-6):
    """Closed-form argmax vs golden-section search and a dense grid, both kinds."""
    pairs = random_pairs(n_cases, np.random.default_rng(seed))
    grid = np.linspace(-10.0, 10.0, grid_points)
    cases = []
    for kind in ("inference", "generative"):
        spec = games.game_spec(kind)
        for i, (a, b) in enumerate(pairs):
            d_closed = games.scalar_maximizer(kind, a, b)
            d_golden = golden_section_max(lambda d: spec.payoff(a, b, d), -10.0, 10.0)
            best = spec.payoff(a, b, d_closed)
            dominated = bool(np.all(spec.payoff(a, b, grid) <= best))
            err = abs(d_closed - d_golden)
            cases.append(Case(f"maximizer/{kind}/{i}", d_closed, 0.0, d_golden, None,
                              err <= tol and dominated,
                              {"a": a, "b": b, "abs_error": err, "grid_dominated": dominated}))
    return cases


# ---------------------------------------------------------------------------
# optimal discriminators


def random_gaussian_pairs(n, rng):
    """1-D Gaussian pairs whose density ratios have finite fourth moments."""
    out = []
    for _ in range(n):
        first = Gaussian1D(float(rng.uniform(-1.0, 1.0)), float(rng.uniform(0.6, 1.25)))
        second = Gaussian1D(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.9, 1.3)))
        out.append((first, second))
    return out


def pointwise_optimum_cases(seed=0, n_pairs=5, n_points=7, tol=1e-6):
    """The closed-form optimal critic equals the argmax of the integrand at each point."""
    cases = []
    rng = np.random.default_rng(seed)
    grid = np.linspace(-2.0, 3.0, n_points)
    for j, (first, second) in enumerate(random_gaussian_pairs(n_pairs, rng)):
        for kind in ("inference", "generative"):
            spec = games.game_spec(kind)
            if kind == "inference":
                q, p = first, second
                d_star = games.optimal_inference_disc(p.log_prob, lambda z, x: q.log_prob(z))
                dens_a, dens_b = q, p
            else:
                p_data, p_model = first, second
                d_star = games.optimal_generative_disc(p_data.log_prob,
                                                       lambda x, z: p_model.log_prob(x))
                dens_a, dens_b = p_data, p_model
            pts = grid.reshape(-1, 1)
            closed = d_star(pts, pts)
            worst = 0.0
            for t, c in zip(grid, closed):
                a = math.exp(dens_a.log_prob(t)[0])
                b = math.exp(dens_b.log_prob(t)[0])
                found = golden_section_max(lambda d: spec.payoff(a, b, d), -20.0, 20.0)
                worst = max(worst, abs(found - c))
            cases.append(Case(f"optimal-disc/pointwise/{kind}/{j}", float(closed.mean()), 0.0,
                              float(closed.mean()), None, worst <= tol, {"max_abs_error": worst}))
    return cases


def perturbation_cases(n, seed=0, deltas=(-0.1, 0.1), threshold=4.0):
    """Shifting the optimal critic by a constant never raises the value."""
    cases = []
    rng_cases = _streams(seed, 4 * len(deltas))
    base = {"inference": (Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0)),
            "generative": (Gaussian1D(0.0, 1.0), Gaussian1D(0.5, 1.0))}
    k = 0
    for kind, (first, second) in base.items():
        for delta in deltas:
            gap, se, analytic = games.perturbation_gap(kind, first, second, delta, n, rng_cases[k])
            k += 1
            z = gap / se if se > 0 else math.inf
            resolvable = analytic > threshold * se
            ok = (z > threshold) if resolvable else (z > -threshold)
            cases.append(Case(f"optimal-disc/perturb/{kind}/{delta:+g}", gap, se, analytic,
                              (gap - analytic) / se if se > 0 else None, bool(ok),
                              {"resolvable": bool(resolvable)}))
    return cases


def pairing_control_case(n, seed=0, threshold=4.0):
    """Negative control: feeding prior draws where posterior draws belong changes the value."""
    rng = np.random.default_rng(seed)
    q, p = Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0)
    d_star = games.optimal_inference_disc(p.log_prob, lambda z, x: q.log_prob(z))
    x = np.zeros((n, 1))
    zq, zp = q.sample(n, rng), p.sample(n, rng)
    right = games.inference_value(d_star, x, zq, zp)
    swapped = games.inference_value(d_star, x, zp, zq)
    se = math.hypot(right.stderr, swapped.stderr)
    z = (right.value - swapped.value) / se
    return Case("optimal-disc/pairing-control", swapped.value, swapped.stderr, right.value, z,
                abs(z) > threshold)


def trained_disc_case(seed=0, steps=3000, batch_size=256, lr=1e-3, mae_tol=0.1):
    """Fit a critic to q=N(1,1) vs p=N(0,1) with everything else fixed; compare with 0.5 - z."""
    rng = np.random.default_rng(seed)
    net = init_mlp([2, 128, 128, 1], "relu", rng=rng)
    disc = Discriminator(net, 1, 1, clamp_bound=None, name="probe")
    val = fit_inference_disc(
        disc,
        sample_x=lambda n, r: np.zeros((n, 1)),
        sample_z_q=lambda x, r: 1.0 + r.standard_normal((x.shape[0], 1)),
        sample_z_p=lambda n, r: r.standard_normal((n, 1)),
        steps=steps, batch_size=batch_size, lr=lr, rng=rng)
    grid = np.linspace(-2.0, 3.0, 501).reshape(-1, 1)
    pred = discriminate(disc, np.zeros_like(grid), grid).data
    mae = float(np.mean(np.abs(pred - (0.5 - grid[:, 0]))))
    big = 200_000
    est = games.inference_value(disc, np.zeros((big, 1)), 1.0 + rng.standard_normal((big, 1)),
                                rng.standard_normal((big, 1)))
    return Case("optimal-disc/trained-critic", mae, 0.0, 0.0, None,
                mae < mae_tol and 0.35 <= est.value <= 0.65,
                {"mae": mae, "value_estimate": est.value, "value_stderr": est.stderr,
                 "last_batch_value": val.value})


def optimal_disc_suite(n=200_000, seed=0, train_critic=True):
    cases = pointwise_optimum_cases(seed)
    cases += perturbation_cases(n, seed)
    cases.append(pairing_control_case(n, seed))
    if train_critic:
        cases.append(trained_disc_case(seed))
    return cases


# ---------------------------------------------------------------------------
# KL recovery


def kl_recovery_suite(n=1_000_000, seed=0, n_random=10):
    fixed = [
        ("kl-recovery/inference/identical", "inference", Gaussian1D(0.0, 1.0), Gaussian1D(0.0, 1.0)),
        ("kl-recovery/inference/q=N(1,1)", "inference", Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0)),
        ("kl-recovery/generative/identical", "generative", Gaussian1D(0.0, 1.0), Gaussian1D(0.0, 1.0)),
        ("kl-recovery/generative/model=N(0.5,1)", "generative", Gaussian1D(0.0, 1.0),
         Gaussian1D(0.5, 1.0)),
    ]
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    prior = Gaussian1D(0.0, 1.0)
    for i in range(n_random):
        q = Gaussian1D(float(rng.uniform(-1.0, 1.0)), float(rng.uniform(0.5, 1.25)))
        fixed.append((f"kl-recovery/inference/random/{i}", "inference", q, prior))
    for i, (pd, pm) in enumerate(random_gaussian_pairs(n_random, rng)):
        fixed.append((f"kl-recovery/generative/random/{i}", "generative", pd, pm))
    streams = _streams(seed, len(fixed))
    cases = []
    for (cid, kind, first, second), r in zip(fixed, streams):
        rep = games.kl_recovery_check(kind, first, second, n, r, case_id=cid)
        cases.append(Case(cid, rep.estimate, rep.stderr, rep.oracle, rep.zscore, rep.passed,
                          {"mc_kl": rep.mc_kl, "mc_kl_stderr": rep.mc_kl_stderr,
                           "zscore_mc": rep.zscore_mc, "first": [first.mean, first.var],
                           "second": [second.mean, second.var]}))
    return cases


def run_suite(name, samples=1_000_000, seed=0):
    if name == "maximizers":
        return maximizer_suite(seed=seed)
    if name == "optimal-disc":
        return optimal_disc_suite(n=samples, seed=seed)
    if name == "kl-recovery":
        return kl_recovery_suite(n=samples, seed=seed)
    if name == "all":
        return [c for s in SUITES for c in run_suite(s, samples, seed)]
    raise ValueError(f"unknown suite {name!r}")


# ---------------------------------------------------------------------------
# gradient checks


@dataclass
class GradCase:
    case_id: str
    report: ad.GradCheckReport

    @property
    def passed(self):
        return self.report.passed

    def to_dict(self):
        w = self.report.worst
        return {"case_id": self.case_id, "pass": bool(self.passed),
                "max_rel_error": self.report.max_rel_error, "tol": self.report.tol,
                "worst_param": w.name if w else None,
                "worst_index": list(w.worst_index) if w else None,
                "analytic": w.analytic if w else None, "numeric": w.numeric if w else None}


def _leaf(rng, shape, lo=-2.0, hi=2.0, name=None):
    return ad.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, name=name)


def _away_from_zero(rng, shape, margin=1e-3, lo=-2.0, hi=2.0):
    v = rng.uniform(lo, hi, size=shape)
    v[np.abs(v) < margin] = margin
    return v


def autodiff_grad_cases(seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    w = ad.Tensor(rng.uniform(-1, 1, size=(3, 4)))  # fixed output weights make each loss nontrivial

    def weighted(t):
        return ad.sum(t * w)

    cases = []
    for op in ("exp", "tanh", "softplus", "neg"):
        a = _leaf(rng, (3, 4), name="a")
        cases.append(GradCase(f"autodiff/{op}",
                              ad.grad_check(lambda: weighted(ad.elementwise(op, a)), [a], tol=tol)))
    a = ad.Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True, name="a")
    cases.append(GradCase("autodiff/relu", ad.grad_check(lambda: weighted(ad.relu(a)), [a], tol=tol)))
    a = _leaf(rng, (3, 4), 0.1, 2.0, name="a")
    cases.append(GradCase("autodiff/log", ad.grad_check(lambda: weighted(ad.log(a)), [a], tol=tol)))
    for op in ("add", "sub", "mul"):
        a, b = _leaf(rng, (3, 4), name="a"), _leaf(rng, (4,), name="b")
        cases.append(GradCase(f"autodiff/{op}",
                              ad.grad_check(lambda: weighted(ad.elementwise(op, a, b)), [a, b], tol=tol)))
    a = _leaf(rng, (3, 4), name="a")
    b = ad.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)),
                  requires_grad=True, name="b")
    cases.append(GradCase("autodiff/div",
                          ad.grad_check(lambda: weighted(ad.elementwise("div", a, b)), [a, b], tol=tol)))
    a, b = _leaf(rng, (3, 5), name="a"), _leaf(rng, (5, 4), name="b")
    cases.append(GradCase("autodiff/matmul", ad.grad_check(lambda: weighted(ad.matmul(a, b)), [a, b], tol=tol)))
    x, wt, bias = _leaf(rng, (3, 5), name="x"), _leaf(rng, (4, 5), name="w"), _leaf(rng, (4,), name="b")
    cases.append(GradCase("autodiff/linear",
                          ad.grad_check(lambda: weighted(ad.linear(x, wt, bias)), [x, wt, bias], tol=tol)))
    a = _leaf(rng, (3, 4), name="a")
    cases.append(GradCase("autodiff/mean-axis0",
                          ad.grad_check(lambda: ad.sum(ad.mean(a, axis=0) * w.data[0]), [a], tol=tol)))
    cases.append(GradCase("autodiff/sum-axis1",
                          ad.grad_check(lambda: ad.sum(ad.sum(a, axis=1) * w.data[:, 0]), [a], tol=tol)))
    c = _leaf(rng, (3, 2), name="c")
    cases.append(GradCase("autodiff/concat-slice",
                          ad.grad_check(lambda: weighted(ad.concat([ad.columns(a, 1, 3), c])), [a, c], tol=tol)))
    cases.append(GradCase("autodiff/reshape",
                          ad.grad_check(lambda: weighted(ad.reshape(ad.reshape(a, (12,)), (3, 4))), [a], tol=tol)))
    x, y = _leaf(rng, (3, 4), 0.2, 2.0, name="x"), _leaf(rng, (3, 4), name="y")
    cases.append(GradCase("autodiff/exp-log-composite",
                          ad.grad_check(lambda: weighted(ad.exp(ad.log(x) * y)), [x, y], tol=tol)))
    return cases


def _named(pairs):
    out = []
    for name, p in pairs:
        p.name = name
        out.append(p)
    return out


def model_grad_cases(seed=0, tol=1e-4, batch=4):
    """encode/decode/discriminate gradients for every network role on a batch of 4."""
    cases = []
    x = np.random.default_rng(seed).standard_normal((batch, 2))
    z = np.random.default_rng(seed + 1).standard_normal((batch, 2))
    w = np.random.default_rng(seed + 2).uniform(-1, 1, size=(batch, 2))
    for kind in ("gaussian", "full"):
        v = build_variant(kind, 2, 2, gen_hidden=[5], disc_hidden=[6], seed=seed, clamp_bound=3.0)

        def enc_loss():
            return ad.sum(v.encoder(x, np.random.default_rng(7)) * w)

        def dec_loss():
            return ad.sum(v.decoder(z, np.random.default_rng(8)) * w)

        cases.append(GradCase(f"models/{kind}/encode",
                              ad.grad_check(enc_loss, _named(v.encoder.named_parameters()), tol=tol)))
        cases.append(GradCase(f"models/{kind}/decode",
                              ad.grad_check(dec_loss, _named(v.decoder.named_parameters()), tol=tol)))
        if v.inference_disc is not None:
            d = v.inference_disc
            cases.append(GradCase(f"models/{kind}/discriminate",
                                  ad.grad_check(lambda: ad.sum(discriminate(d, x, z) * w[:, 0]),
                                                _named(d.named_parameters()), tol=tol)))
    mean = _leaf(np.random.default_rng(seed + 3), (batch, 2), name="mean")
    logvar = _leaf(np.random.default_rng(seed + 4), (batch, 2), -1.0, 1.0, name="log_variance")
    eps = np.random.default_rng(seed + 5).standard_normal((batch, 2))
    cases.append(GradCase("models/sample_reparam",
                          ad.grad_check(lambda: ad.sum(sample_reparam(DiagonalGaussian(mean, logvar), eps) * w),
                                        [mean, logvar], tol=tol)))
    cases.append(GradCase("models/log_density",
                          ad.grad_check(lambda: ad.sum(log_density(DiagonalGaussian(mean, logvar), ad.Tensor(x))),
                                        [mean, logvar], tol=tol)))
    return cases


def game_grad_cases(seed=0, tol=1e-4, batch=4):
    """Value functions, both generator losses and the combined objective."""
    cases = []
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, 1))
    zq, zp = 1.0 + rng.standard_normal((batch, 1)), rng.standard_normal((batch, 1))
    disc = Discriminator(init_mlp([2, 2, 1], "tanh", rng=rng), 1, 1, None, "tiny_disc")
    params = _named(disc.named_parameters())
    cases.append(GradCase("games/inference_value",
                          ad.grad_check(lambda: games.inference_value(disc, x, zq, zp).objective, params, tol=tol)))
    cases.append(GradCase("games/generative_value",
                          ad.grad_check(lambda: games.generative_value(disc, zq, x, zp).objective, params, tol=tol)))

    v = build_variant("full", 2, 2, gen_hidden=[4], disc_hidden=[4], seed=seed, clamp_bound=5.0)
    xb = np.random.default_rng(seed + 1).standard_normal((batch, 2))
    enc = _named(v.encoder.named_parameters())
    dec = _named(v.decoder.named_parameters())
    critics = _named(list(v.inference_disc.named_parameters()) + list(v.generative_disc.named_parameters()))

    def objective(part):
        def f():
            inf, gen = games.combined_objective(v, xb, np.random.default_rng(11))
            if part == "inference_generator":
                return inf.gen_loss
            if part == "generative_generator":
                return gen.gen_loss
            if part == "generators":
                return inf.gen_loss + gen.gen_loss
            return inf.disc_loss + gen.disc_loss
        return f

    cases.append(GradCase("games/inference_generator_loss",
                          ad.grad_check(objective("inference_generator"), enc, tol=tol)))
    cases.append(GradCase("games/generative_generator_loss",
                          ad.grad_check(objective("generative_generator"), enc + dec, tol=tol)))
    cases.append(GradCase("games/combined/generators",
                          ad.grad_check(objective("generators"), enc + dec, tol=tol)))
    cases.append(GradCase("games/combined/critics",
                          ad.grad_check(objective("critics"), critics, tol=tol)))
    return cases


def grad_check_suite(scope, seed=0, tol=1e-4):
    if scope == "autodiff":
        return autodiff_grad_cases(seed, tol)
    if scope == "models":
        return model_grad_cases(seed, tol)
    if scope == "games":
        return game_grad_cases(seed, tol)
    if scope == "all":
        return [c for s in GRAD_SCOPES for c in grad_check_suite(s, seed, tol)]
    raise ValueError(f"unknown grad-check scope {scope!r}")
