"""Active hypothesis verification: KL zero-sum games, selection policies and Monte Carlo experiments."""

from .game import GameSolution, critical_sets, fixed_point_residual, payoff_matrix, rate_profile, solve_for, solve_game
from .model import (
    Belief,
    HypothesisModel,
    alternates_distribution,
    assumption_bound,
    bayes_update,
    bllr,
    ejs_value,
    expected_reward,
    kl_divergence,
    load_bundled,
    load_scenario,
    log_likelihood_ratio,
    read_scenario,
)
from .strategies import StrategySpec, parse_strategy

__version__ = "0.1.0"
