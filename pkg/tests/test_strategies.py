import random

import numpy as np
import pytest

from hypverify.game import payoff_matrix, solve_for, solve_game
from hypverify.model import Belief, DegenerateBelief
from hypverify.strategies import (
    Kind,
    Policy,
    SelectionContext,
    StrategyError,
    StrategySpec,
    inverse_cdf,
    klz_payoffs,
    parse_strategy,
    select,
    select_ejs,
    select_klz,
    select_ope,
    select_two_phase,
    select_uniform,
)

from . import oracles


def ctx(model, probs, seed=0):
    return SelectionContext(Belief.from_probs(probs), model, np.random.default_rng(seed))


class TestParse:
    @pytest.mark.parametrize(
        "text, kind, target",
        [("ope:h0", Kind.OPE, 0), ("ejs", Kind.EJS, None), ("klz:h2", Kind.KLZ, 2), ("uniform", Kind.UNIFORM, None), ("klz", Kind.KLZ, None)],
    )
    def test_simple(self, setup1, text, kind, target):
        spec = parse_strategy(text, setup1)
        assert (spec.kind, spec.target) == (kind, target)

    def test_two_phase(self, setup1):
        spec = parse_strategy("twophase:0.9:uniform:klz", setup1)
        assert spec.kind is Kind.TWO_PHASE
        assert spec.threshold == 0.9
        assert spec.inner == StrategySpec(Kind.UNIFORM)
        assert spec.verifier is Kind.KLZ
        assert parse_strategy("twophase:0.8:ejs:ope", setup1).verifier is Kind.OPE

    @pytest.mark.parametrize("text", ["bogus", "klz:h9", "ejs:h0", "twophase:0.4:uniform:klz", "twophase:1.0", "twophase:0.9:uniform:ejs", "twophase:x"])
    def test_rejects(self, setup1, text):
        with pytest.raises(StrategyError):
            parse_strategy(text, setup1)


class TestInverseCdf:
    def test_point_mass(self):
        u = np.linspace(0, 1, 101, endpoint=False)
        assert np.all(inverse_cdf([1.0, 0.0], u) == 0)
        assert np.all(inverse_cdf([0.0, 1.0], u) == 1)

    def test_zero_weights_skipped(self):
        u = np.array([0.0, 0.25, 0.5, np.nextafter(1.0, 0)])
        np.testing.assert_array_equal(inverse_cdf([0, 0, 0.5, 0.5], u), [2, 2, 3, 3])
        np.testing.assert_array_equal(inverse_cdf([0.5, 0.5, 0.0], u), [0, 0, 1, 1])


class TestOPE:
    def test_point_mass(self, setup1):
        sol = solve_game([[1.0], [0.0]])
        c = ctx(setup1, [1 / 3] * 3)
        assert {select_ope(c, sol) for _ in range(200)} == {0}

    def test_frequency(self, setup1):
        sol = solve_for(setup1, 0)
        c = ctx(setup1, [1 / 3] * 3, seed=42)
        picks = [select_ope(c, sol) for _ in range(100_000)]
        assert abs(picks.count(0) / 1e5 - 0.5) < 0.01

    def test_setup2_support(self, setup2):
        sol = solve_for(setup2, 0)
        c = ctx(setup2, [0.2, 0.3, 0.5], seed=1)
        assert {select_ope(c, sol) for _ in range(5000)} == {2, 3}

    def test_replay(self, setup1):
        sol = solve_for(setup1, 0)
        c1, c2 = ctx(setup1, [1 / 3] * 3, seed=5), ctx(setup1, [1 / 3] * 3, seed=5)
        assert [select_ope(c1, sol) for _ in range(100)] == [select_ope(c2, sol) for _ in range(100)]


class TestEJS:
    def test_identical_tie(self, identical):
        assert select_ejs(ctx(identical, [0.2, 0.3, 0.5])) == 0

    def test_separating_experiment(self, setup1):
        rho = [0.1, 0.8, 0.1]
        assert select_ejs(ctx(setup1, rho)) == 0
        assert oracles.select_ejs_oracle(rho, setup1.prob.tolist()) == 0

    def test_uniform_tie(self, setup1):
        assert select_ejs(ctx(setup1, [1 / 3] * 3)) == 0
        assert oracles.select_ejs_oracle([1 / 3] * 3, setup1.prob.tolist()) == 0

    def test_agrees_with_enumeration(self, scenarios):
        rng = random.Random(17)
        for m in scenarios.values():
            prob = m.prob.tolist()
            for _ in range(300):
                rho = oracles.random_interior_belief(rng, 3)
                assert select_ejs(ctx(m, rho)) == oracles.select_ejs_oracle(rho, prob)


class TestKLZ:
    def test_tie_setup1(self, setup1):
        c = ctx(setup1, [0.5, 0.25, 0.25])
        np.testing.assert_allclose(klz_payoffs(setup1, c.belief.logrho[None], 0), [[0.4158883, 0.4158883]], atol=1e-7)
        assert select_klz(c, "h0") == 0

    def test_lopsided(self, setup1):
        c = ctx(setup1, [0.5, 0.45, 0.05])
        np.testing.assert_allclose(klz_payoffs(setup1, c.belief.logrho[None], 0), [[0.7485989, 0.0831777]], atol=1e-7)
        assert select_klz(c, 0) == 0
        assert select_klz(ctx(setup1, [0.5, 0.05, 0.45]), 0) == 1

    def test_setup2_prefers_sharp_queries(self, setup2):
        c = ctx(setup2, [0.5, 0.25, 0.25])
        pay = klz_payoffs(setup2, c.belief.logrho[None], 0)[0]
        np.testing.assert_allclose(pay, [0.4158883, 0.4158883, 1.3616084, 1.3616084], atol=1e-7)
        assert select_klz(c, 0) == 2

    def test_degenerate(self, setup1):
        with pytest.raises(DegenerateBelief):
            select_klz(ctx(setup1, [1, 0, 0]), 0)

    def test_equilibrium_consistency(self, scenarios):
        """At rho~ = beta*, every critical experiment earns the game value and is a maximizer."""
        for m in scenarios.values():
            for h in range(3):
                sol = solve_for(m, h)
                beta = sol.beta_by_hypothesis(3)
                rho = 0.6 * beta
                rho[h] = 0.4
                with np.errstate(divide="ignore"):
                    pay = klz_payoffs(m, np.log(rho)[None], h)[0]
                for u in sol.critical_experiments:
                    assert pay[u] == pytest.approx(sol.value, abs=1e-12)
                    assert pay[u] >= pay.max() - 1e-12

    def test_best_response_dominates_mixture(self, scenarios):
        rng = np.random.default_rng(2)
        for m in scenarios.values():
            sol = solve_for(m, 0)
            logrho = np.log(rng.dirichlet(np.ones(3), size=1000))
            pay = klz_payoffs(m, logrho, 0)
            choice = Policy(StrategySpec(Kind.KLZ, 0), m).choose(logrho, np.zeros(1000))
            chosen = pay[np.arange(1000), choice]
            assert np.all(chosen >= pay @ sol.alpha_star - 1e-12)


class TestUniform:
    def test_single_experiment(self):
        from hypverify.model import HypothesisModel

        m = HypothesisModel(("a", "b"), ("only",), ("0", "1"), [[[0.5, 0.5]], [[0.4, 0.6]]])
        assert select_uniform(ctx(m, [0.5, 0.5])) == 0

    def test_frequency(self, setup1):
        c = ctx(setup1, [1 / 3] * 3, seed=9)
        picks = [select_uniform(c) for _ in range(100_000)]
        assert abs(picks.count(0) / 1e5 - 0.5) < 0.01

    def test_replay(self, setup2):
        c1, c2 = ctx(setup2, [1 / 3] * 3, seed=3), ctx(setup2, [1 / 3] * 3, seed=3)
        assert [select_uniform(c1) for _ in range(50)] == [select_uniform(c2) for _ in range(50)]


class TestTwoPhase:
    spec = StrategySpec(Kind.TWO_PHASE, threshold=0.9)

    def test_verifies_confident_hypothesis(self, setup1):
        c = ctx(setup1, [0.95, 0.03, 0.02])
        assert select_two_phase(c, self.spec) == select_klz(c, 0) == 0

    def test_explores_when_unsure(self, setup1):
        c1, c2 = ctx(setup1, [1 / 3] * 3, seed=4), ctx(setup1, [1 / 3] * 3, seed=4)
        assert [select_two_phase(c1, self.spec) for _ in range(30)] == [select_uniform(c2) for _ in range(30)]

    def test_zero_alternate(self, setup1):
        c = ctx(setup1, [0.91, 0.09, 0])
        assert select_two_phase(c, self.spec) == select_klz(c, 0) == 0

    def test_ope_verifier(self, setup2):
        spec = StrategySpec(Kind.TWO_PHASE, threshold=0.9, verifier=Kind.OPE)
        c = ctx(setup2, [0.02, 0.95, 0.03], seed=1)
        sol = solve_for(setup2, 1)
        picks = {select_two_phase(c, spec) for _ in range(500)}
        assert picks <= set(sol.critical_experiments)

    def test_invalid_threshold(self):
        with pytest.raises(StrategyError):
            StrategySpec(Kind.TWO_PHASE, threshold=0.5)
        with pytest.raises(StrategyError):
            StrategySpec(Kind.TWO_PHASE, threshold=1.0)

    def test_requires_two_phase_spec(self, setup1):
        with pytest.raises(StrategyError):
            select_two_phase(ctx(setup1, [1 / 3] * 3), StrategySpec(Kind.EJS))


class TestBatchMatchesScalar:
    @pytest.mark.parametrize("text", ["ejs", "klz:h0", "klz", "twophase:0.7:ejs:klz"])
    def test_deterministic_policies(self, scenarios, text):
        rng = np.random.default_rng(6)
        for m in scenarios.values():
            spec = parse_strategy(text, m)
            logrho = np.log(rng.dirichlet(np.ones(3) * 0.5, size=300))
            batch = Policy(spec, m).choose(logrho, rng.random(300))
            scalar = [select(SelectionContext(Belief(lr), m, np.random.default_rng(0)), spec) for lr in logrho]
            np.testing.assert_array_equal(batch, scalar)

    def test_payoff_cache(self, setup2):
        p = Policy(StrategySpec(Kind.KLZ, 1), setup2)
        p.choose(np.log([[0.2, 0.5, 0.3]]), np.zeros(1))
        np.testing.assert_array_equal(p._payoffs[1], payoff_matrix(setup2, 1))
