import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advae import autodiff as ad
from advae import games
from advae.errors import AdvaeError, DomainError, NumericError
from advae.games import Gaussian1D
from advae.models import build_variant
from advae.oracles import golden_section_max


def const(c):
    return lambda x, z: np.full(np.asarray(x).shape[0], float(c))


X = np.zeros((64, 1))
Z = np.random.default_rng(0).standard_normal((64, 1))


class TestScalarMaximizer:
    def test_unit_inputs(self):
        assert games.scalar_maximizer("inference", 1.0, 1.0) == 0.0
        assert games.scalar_maximizer("generative", 1.0, 1.0) == 1.0

    def test_against_golden_section(self):
        d = games.scalar_maximizer("inference", 0.5, 2.0)
        assert d == pytest.approx(math.log(4.0))
        found = golden_section_max(lambda t: games.INFERENCE.payoff(0.5, 2.0, t), -10, 10)
        assert abs(found - d) < 1e-6

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, -2.0)])
    def test_domain(self, a, b):
        with pytest.raises(DomainError):
            games.scalar_maximizer("inference", a, b)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(-10.0, 10.0),
           st.sampled_from(["inference", "generative"]))
    def test_dominates_any_other_point(self, a, b, d, kind):
        spec = games.game_spec(kind)
        best = games.scalar_maximizer(kind, a, b)
        assert spec.payoff(a, b, best) >= spec.payoff(a, b, d) - 1e-12


class TestInferenceGame:
    def test_zero_critic(self):
        assert games.inference_value(const(0.0), X, Z, Z).value == 0.0

    def test_constant_critic(self):
        assert games.inference_value(const(1.0), X, Z, Z).value == pytest.approx(-math.exp(-1.0))

    def test_optimal_disc_values(self):
        q, p = Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0)
        d = games.optimal_inference_disc(p.log_prob, lambda z, x: q.log_prob(z))
        np.testing.assert_allclose(d(np.zeros((2, 1)), np.array([[0.0], [1.0]])), [0.5, -0.5],
                                   atol=1e-15)
        same = games.optimal_inference_disc(p.log_prob, lambda z, x: p.log_prob(z))
        assert np.all(same(X, Z) == 0.0)

    def test_value_at_optimum_is_kl(self):
        rng = np.random.default_rng(1)
        rep = games.kl_recovery_check("inference", Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0),
                                      1_000_000, rng)
        assert rep.passed and abs(rep.estimate - 0.5) < 4 * rep.stderr

    def test_generator_loss_constants(self):
        assert games.inference_generator_loss(const(0.0), X, Z).item() == 1.0
        assert games.inference_generator_loss(const(5.0), X, Z).item() == -4.0

    def test_overflow_is_numeric_error(self):
        with pytest.raises(NumericError) as info:
            games.inference_value(const(-800.0), X, Z, Z)
        assert info.value.context["max_abs_d"] == 800.0


class TestGenerativeGame:
    def test_fixed_point(self):
        assert games.generative_value(const(1.0), Z, X, X).value == 0.0

    def test_zero_critic(self):
        assert games.generative_value(const(0.0), Z, X, X).value == pytest.approx(-math.exp(-1.0))

    def test_optimal_disc_values(self):
        pd, pm = Gaussian1D(0.0, 1.0), Gaussian1D(0.0, math.e)
        d = games.optimal_generative_disc(pd.log_prob, lambda x, z: pm.log_prob(x))
        assert d(np.zeros((1, 1)), np.zeros((1, 1)))[0] == pytest.approx(1.5, abs=1e-15)
        same = games.optimal_generative_disc(pd.log_prob, lambda x, z: pd.log_prob(x))
        assert np.all(same(Z, X) == 1.0)

    def test_swapping_densities_reflects(self):
        pd, pm = Gaussian1D(0.3, 0.8), Gaussian1D(-0.2, 1.4)
        d = games.optimal_generative_disc(pd.log_prob, lambda x, z: pm.log_prob(x))
        r = games.optimal_generative_disc(pm.log_prob, lambda x, z: pd.log_prob(x))
        np.testing.assert_allclose(r(Z, X), 2.0 - d(Z, X), atol=1e-14)

    def test_generator_loss_constants(self):
        assert games.generative_generator_loss(const(1.0), X, Z).item() == -1.0
        assert games.generative_generator_loss(const(1.0 + math.log(2.0)), X, Z).item() == \
            pytest.approx(-2.0, abs=1e-15)

    def test_real_term_added(self):
        loss = games.generative_generator_loss(const(2.0), X, Z, x_real=Z)
        assert loss.item() == pytest.approx(-math.e + 2.0)

    def test_value_at_optimum_is_direct_kl(self):
        rep = games.kl_recovery_check("generative", Gaussian1D(0.0, 1.0), Gaussian1D(0.5, 1.0),
                                      1_000_000, np.random.default_rng(2))
        assert rep.passed and rep.oracle == 0.125
        assert abs(rep.estimate - rep.mc_kl) < 4 * math.hypot(rep.stderr, rep.mc_kl_stderr)


class TestRecoveryAndPerturbation:
    @pytest.mark.parametrize("kind", ["inference", "generative"])
    def test_identical_distributions(self, kind):
        g = Gaussian1D(0.2, 0.7)
        rep = games.kl_recovery_check(kind, g, g, 1000, np.random.default_rng(3))
        assert rep.estimate == 0.0 and rep.zscore == 0.0 and rep.passed

    def test_wrong_oracle_fails(self):
        # evaluating the value at the optimum for q=N(1,1) but scoring against N(0.5,1)
        rep = games.kl_recovery_check("inference", Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0),
                                      200_000, np.random.default_rng(4))
        assert abs((rep.estimate - 0.125) / rep.stderr) > 4

    @pytest.mark.parametrize("kind", ["inference", "generative"])
    @pytest.mark.parametrize("delta", [-0.1, 0.1])
    def test_shifted_critic_is_worse(self, kind, delta):
        first, second = Gaussian1D(1.0, 1.0), Gaussian1D(0.0, 1.0)
        gap, se, analytic = games.perturbation_gap(kind, first, second, delta, 200_000,
                                                   np.random.default_rng(5))
        assert analytic > 0 and gap - 4 * se > 0
        assert abs(gap - analytic) < 4 * se


class TestCombinedObjective:
    def setup_method(self):
        self.v = build_variant("full", 2, 2, gen_hidden=[4], disc_hidden=[4], seed=1)
        self.x = np.random.default_rng(6).standard_normal((8, 2))

    def test_decoder_untouched_by_inference_game(self):
        inf, _ = games.combined_objective(self.v, self.x, np.random.default_rng(0))
        ad.backward(inf.gen_loss + inf.disc_loss)
        assert all(p.grad is None or np.all(p.grad == 0.0) for p in self.v.decoder.parameters())
        assert any(p.grad is not None and np.any(p.grad != 0) for p in self.v.encoder.parameters())

    def test_discriminator_losses_do_not_reach_generators(self):
        inf, gen = games.combined_objective(self.v, self.x, np.random.default_rng(0))
        ad.backward(inf.disc_loss + gen.disc_loss)
        for _, p in self.v.generator_named_parameters():
            assert p.grad is None

    def test_generator_losses_do_not_reach_critics(self):
        inf, gen = games.combined_objective(self.v, self.x, np.random.default_rng(0))
        ad.backward(inf.gen_loss + gen.gen_loss)
        for d in (self.v.inference_disc, self.v.generative_disc):
            assert all(p.grad is None for p in d.parameters())

    def test_constant_critics(self):
        for d, c in ((self.v.inference_disc, 0.5), (self.v.generative_disc, 2.0)):
            for layer in d.net.layers:
                layer.weight.data[...] = 0.0
                layer.bias.data[...] = 0.0
            d.net.layers[-1].bias.data[...] = math.atanh(c / d.clamp_bound) * d.clamp_bound
        inf, gen = games.combined_objective(self.v, self.x, np.random.default_rng(0))
        assert inf.gen_loss.item() == pytest.approx(0.5, abs=1e-12)
        assert inf.value.value == pytest.approx(0.5 - math.exp(-0.5), abs=1e-12)
        assert gen.gen_loss.item() == pytest.approx(-math.e + 2.0, abs=1e-12)
        assert gen.value.value == pytest.approx(2.0 - math.e, abs=1e-12)

    def test_needs_both_discriminators(self):
        v = build_variant("implicit-encoder", 2, 2)
        with pytest.raises(AdvaeError):
            games.combined_objective(v, self.x, np.random.default_rng(0))

    def test_grad_check_tiny_variant(self):
        v = self.v
        enc_dec = list(v.encoder.parameters()) + list(v.decoder.parameters())
        critics = list(v.inference_disc.parameters()) + list(v.generative_disc.parameters())

        def loss(part):
            def f():
                inf, gen = games.combined_objective(v, self.x[:4], np.random.default_rng(9))
                return inf.gen_loss + gen.gen_loss if part == "gen" else inf.disc_loss + gen.disc_loss
            return f

        assert ad.grad_check(loss("gen"), enc_dec).passed
        assert ad.grad_check(loss("disc"), critics).passed


def test_pairing_control():
    from advae.verify import pairing_control_case
    case = pairing_control_case(100_000, seed=0)
    assert case.passed and abs(case.zscore) > 4
