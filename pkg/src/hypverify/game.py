"""KL-divergence zero-sum game for a target hypothesis.

The maximizing player picks an experiment, the minimizing player picks an
alternate hypothesis, and the payoff is ``D(p_h^u || p_j^u)``. The game is
solved exactly: payoffs are converted to rationals and a dense simplex with
Bland's rule runs in :class:`fractions.Fraction` arithmetic, so the returned
strategies are exact up to the final rounding to float.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import Belief, HypothesisModel, bayes_update_batch, expected_reward_batch, log_alternates

SUPPORT_THRESHOLD = 1e-8
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10**6


class SolverDidNotConverge(RuntimeError):
    code = "SOLVER_NOT_CONVERGED"

    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


@dataclass(frozen=True, eq=False)
class GameSolution:
    payoff: np.ndarray
    alpha_star: np.ndarray
    beta_star: np.ndarray
    value: float
    duality_gap: float
    critical_experiments: tuple[int, ...]
    critical_hypotheses: tuple[int, ...]
    # hypothesis index of each payoff column; identity when solved from a bare matrix
    alternates: tuple[int, ...]
    target: int | None = None

    def beta_by_hypothesis(self, n_hypotheses: int) -> np.ndarray:
        full = np.zeros(n_hypotheses)
        full[list(self.alternates)] = self.beta_star
        return full


@dataclass(frozen=True)
class RateProfile:
    rates: dict[int, float]


@dataclass(frozen=True)
class FixedPointCheck:
    residual: float
    # r(rho,u) + E[w(F(rho,u,Y))] - w(rho) for each experiment
    per_experiment: np.ndarray
    critical_are_maximizers: bool


def payoff_matrix(model: HypothesisModel, h) -> np.ndarray:
    """``M[u, k] = D(p_h^u || p_{j_k}^u)`` with columns the alternates in index order."""
    h = model.hypothesis_index(h)
    lp = model.log_prob
    p_h = model.prob[h]
    alts = [j for j in range(model.n_hypotheses) if j != h]
    M = np.empty((model.n_experiments, len(alts)))
    for k, j in enumerate(alts):
        M[:, k] = np.sum(p_h * (lp[h] - lp[j]), axis=1)
    # each KL term is >= 0; clip rounding noise on identical rows
    return np.maximum(M, 0.0)


def duality_gap(payoff: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> float:
    """``max_u (M beta)_u - min_j (alpha M)_j``; zero exactly at an equilibrium."""
    M = np.asarray(payoff, dtype=float)
    return float(np.max(M @ beta) - np.min(alpha @ M))


def _simplex_max_unit(A: list[list[Fraction]], max_iter: int) -> tuple[list[Fraction], list[Fraction], int]:
    """Maximize ``sum(y)`` subject to ``A y <= 1``, ``y >= 0`` for a positive matrix ``A``.

    Returns the primal ``y``, the dual ``x`` (slack reduced costs) and the pivot
    count. Bland's rule picks the lowest-index entering and leaving variables,
    which both prevents cycling and makes the result deterministic.
    """
    m, n = len(A), len(A[0])
    # columns: y_0..y_{n-1}, s_0..s_{m-1}, rhs
    rows = [list(A[i]) + [Fraction(int(k == i)) for k in range(m)] + [Fraction(1)] for i in range(m)]
    obj = [Fraction(-1)] * n + [Fraction(0)] * m + [Fraction(0)]
    basis = [n + i for i in range(m)]
    iters = 0
    while True:
        entering = next((c for c in range(n + m) if obj[c] < 0), None)
        if entering is None:
            break
        if iters >= max_iter:
            raise SolverDidNotConverge(f"simplex exceeded {max_iter} pivots", float("inf"))
        iters += 1
        leave, best = None, None
        for i in range(m):
            a = rows[i][entering]
            if a > 0:
                ratio = rows[i][-1] / a
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    leave, best = i, ratio
        if leave is None:  # unreachable for positive A
            raise SolverDidNotConverge("unbounded program", float("inf"))
        piv = rows[leave][entering]
        rows[leave] = [v / piv for v in rows[leave]]
        for i in range(m):
            f = rows[i][entering]
            if i != leave and f != 0:
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[leave])]
        f = obj[entering]
        obj = [a - f * b for a, b in zip(obj, rows[leave])]
        basis[leave] = entering

    y = [Fraction(0)] * n
    for i, var in enumerate(basis):
        if var < n:
            y[var] = rows[i][-1]
    x = obj[n : n + m]
    return y, x, iters


def solve_game(
    payoff,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    alternates=None,
    target: int | None = None,
) -> GameSolution:
    """Solve the zero-sum game with the row player maximizing ``alpha^T M beta``.

    The duality gap is recomputed in floating point from the returned
    strategies; a gap above ``tol * max(1, |value|)`` raises
    :class:`SolverDidNotConverge`.
    """
    M = np.asarray(payoff, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"payoff must be a non-empty matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff must be finite")

    exact = [[Fraction(float(v)) for v in row] for row in M]
    lo = min(min(r) for r in exact)
    hi = max(max(r) for r in exact)
    span = hi - lo if hi > lo else Fraction(1)
    # affine map onto [1, 2]: every entry positive, so the LP below is bounded and feasible
    shifted = [[(v - lo) / span + 1 for v in row] for row in exact]

    y, x, _ = _simplex_max_unit(shifted, max_iter)
    total = sum(y)
    value_exact = (1 / total - 1) * span + lo
    alpha = np.array([float(v / total) for v in x])
    beta = np.array([float(v / total) for v in y])
    value = float(value_exact)

    gap = duality_gap(M, alpha, beta)
    if gap > tol * max(1.0, abs(value)):
        raise SolverDidNotConverge(f"duality gap {gap:.3e} exceeds tolerance {tol:.1e}", gap)

    alternates = tuple(range(M.shape[1])) if alternates is None else tuple(alternates)
    crit_u = tuple(int(i) for i in np.flatnonzero(alpha > SUPPORT_THRESHOLD))
    crit_j = tuple(alternates[k] for k in np.flatnonzero(beta > SUPPORT_THRESHOLD))
    M = M.copy()
    for arr in (M, alpha, beta):
        arr.setflags(write=False)
    return GameSolution(
        payoff=M,
        alpha_star=alpha,
        beta_star=beta,
        value=value,
        duality_gap=max(gap, 0.0),
        critical_experiments=crit_u,
        critical_hypotheses=crit_j,
        alternates=alternates,
        target=target,
    )


def solve_for(model: HypothesisModel, h, tol: float = DEFAULT_TOL) -> GameSolution:
    """Build and solve the KL game for target hypothesis ``h``."""
    h = model.hypothesis_index(h)
    alts = tuple(j for j in range(model.n_hypotheses) if j != h)
    return solve_game(payoff_matrix(model, h), tol, alternates=alts, target=h)


def critical_sets(solution: GameSolution) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return solution.critical_experiments, solution.critical_hypotheses


def rate_profile(model: HypothesisModel, h, solution: GameSolution) -> RateProfile:
    """Elimination rate ``R_j = sum_u alpha*_u D(p_h^u || p_j^u)`` of each alternate."""
    h = model.hypothesis_index(h)
    M = payoff_matrix(model, h)
    rates = solution.alpha_star @ M
    alts = [j for j in range(model.n_hypotheses) if j != h]
    return RateProfile({j: float(r) for j, r in zip(alts, rates)})


def fixed_point_residual(
    model: HypothesisModel, h, solution: GameSolution, belief: Belief
) -> FixedPointCheck:
    """Evaluate the average-reward fixed point with ``w(rho) = -sum_j beta*_j log rho~_j``.

    The returned residual should equal the game value at every interior belief.
    """
    h = model.hypothesis_index(h)
    beta = solution.beta_star

    def w(logrho):
        return -(log_alternates(logrho, h) @ beta)

    logrho = belief.logrho
    if np.any(np.delete(logrho, h) == -np.inf):
        raise ValueError("w is undefined when an alternate has zero mass")
    rewards = expected_reward_batch(model, logrho, h)
    w0 = w(logrho)
    vals = np.empty(model.n_experiments)
    for u in range(model.n_experiments):
        future = sum(
            model.prob[h, u, y] * w(bayes_update_batch(model, logrho, u, y))
            for y in range(model.n_observations)
        )
        vals[u] = rewards[u] + future - w0
    best = float(vals.max())
    attains = all(best - vals[u] <= 1e-9 for u in solution.critical_experiments)
    return FixedPointCheck(residual=best, per_experiment=vals, critical_are_maximizers=attains)
