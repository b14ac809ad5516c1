"""Experiment-selection policies.

Each policy is implemented once in batch form: given log-beliefs of shape
``(T, H)`` and one uniform variate per row it returns ``T`` experiment
indices. The scalar ``select_*`` functions wrap the batch form for a single
belief and draw their variate from the context's generator.

Argmax ties (within :data:`TIE_TOL`, relative) go to the lowest experiment
index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .game import GameSolution, payoff_matrix, solve_for
from .model import Belief, HypothesisModel, ejs_batch, log_alternates

TIE_TOL = 1e-10
DEFAULT_THRESHOLD = 0.9


class StrategyError(ValueError):
    code = "BAD_STRATEGY"


class Kind(str, enum.Enum):
    OPE = "ope"
    EJS = "ejs"
    KLZ = "klz"
    UNIFORM = "uniform"
    TWO_PHASE = "twophase"


@dataclass(frozen=True)
class StrategySpec:
    """Declarative policy description.

    ``target`` is the verified hypothesis for OPE/KLZ; when it is ``None`` the
    current most likely hypothesis is verified. For TWO_PHASE, ``inner`` is the
    exploration policy and ``verifier`` the verification kind.
    """

    kind: Kind
    target: int | None = None
    threshold: float | None = None
    inner: "StrategySpec | None" = None
    verifier: Kind = Kind.KLZ

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "verifier", Kind(self.verifier))
        if self.kind is Kind.TWO_PHASE:
            if self.threshold is None or not 0.5 < self.threshold < 1.0:
                raise StrategyError(f"two-phase threshold must lie in (0.5, 1), got {self.threshold}")
            if self.inner is None:
                object.__setattr__(self, "inner", StrategySpec(Kind.UNIFORM))
            if self.verifier not in (Kind.KLZ, Kind.OPE):
                raise StrategyError("two-phase verifier must be klz or ope")

    def __str__(self):
        if self.kind is Kind.TWO_PHASE:
            return f"twophase:{self.threshold:g}:{self.inner}:{self.verifier.value}"
        if self.target is not None:
            return f"{self.kind.value}:{self.target}"
        return self.kind.value


def parse_strategy(text: str, model: HypothesisModel | None = None) -> StrategySpec:
    """Parse ``ope:h0``, ``ejs``, ``klz:h0``, ``uniform`` or ``twophase:0.9:uniform:klz``.

    Hypothesis labels are resolved against ``model``; without a model, only
    integer indices are accepted as targets.
    """
    parts = text.strip().split(":")
    head = parts[0].lower()

    def target(label):
        if model is not None:
            try:
                return model.hypothesis_index(label)
            except IndexError as exc:
                raise StrategyError(str(exc)) from None
        try:
            return int(label)
        except ValueError:
            raise StrategyError(f"cannot resolve hypothesis {label!r} without a model") from None

    if head in ("ope", "klz") and len(parts) in (1, 2):
        return StrategySpec(Kind(head), target(parts[1]) if len(parts) == 2 else None)
    if head in ("ejs", "uniform") and len(parts) == 1:
        return StrategySpec(Kind(head))
    if head == "twophase" and 2 <= len(parts) <= 4:
        try:
            threshold = float(parts[1])
        except ValueError:
            raise StrategyError(f"bad threshold {parts[1]!r}") from None
        inner = parse_strategy(parts[2], model) if len(parts) > 2 else StrategySpec(Kind.UNIFORM)
        if inner.kind is Kind.TWO_PHASE:
            raise StrategyError("exploration strategy cannot itself be two-phase")
        verifier = parts[3].lower() if len(parts) > 3 else "klz"
        if verifier not in ("klz", "ope"):
            raise StrategyError(f"unknown verifier {verifier!r}")
        return StrategySpec(Kind.TWO_PHASE, threshold=threshold, inner=inner, verifier=Kind(verifier))
    raise StrategyError(f"unknown strategy {text!r}")


# ---------------------------------------------------------------------------
# batch kernels


def argmax_lowest(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax; near-ties go to the lowest column."""
    values = np.asarray(values, dtype=float)
    best = values.max(axis=-1, keepdims=True)
    cutoff = best - TIE_TOL * np.maximum(1.0, np.abs(best))
    return np.argmax(values >= cutoff, axis=-1)


def inverse_cdf(weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Categorical draws from ``weights`` (last axis) via inverse CDF.

    Zero-weight categories are never returned, including for a variate of
    exactly 0 or one rounding just below 1.
    """
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w, axis=-1)
    cdf = cdf / cdf[..., -1:]
    last = w.shape[-1] - 1 - np.argmax((w > 0)[..., ::-1], axis=-1)
    idx = np.sum(np.asarray(uniforms)[..., None] >= cdf, axis=-1)
    return np.minimum(idx, last)


def klz_payoffs(model: HypothesisModel, logrho: np.ndarray, target: int, D: np.ndarray | None = None):
    """``P(rho, u) = sum_j rho~_j D(p_target^u || p_j^u)``, shape (T, U)."""
    if D is None:
        D = payoff_matrix(model, target)
    return np.exp(log_alternates(logrho, target)) @ D.T


class Policy:
    """Batch evaluator for a :class:`StrategySpec` bound to a model.

    Game solutions are computed on first use and cached per hypothesis.
    """

    def __init__(self, spec: StrategySpec, model: HypothesisModel, solutions: dict[int, GameSolution] | None = None):
        self.spec = spec
        self.model = model
        self.solutions = dict(solutions or {})
        self._payoffs: dict[int, np.ndarray] = {}
        self._inner = Policy(spec.inner, model, self.solutions) if spec.kind is Kind.TWO_PHASE else None
        if spec.kind is Kind.TWO_PHASE:
            self._inner.solutions = self.solutions

    def solution(self, h: int) -> GameSolution:
        if h not in self.solutions:
            self.solutions[h] = solve_for(self.model, h)
        return self.solutions[h]

    def _payoff(self, h: int) -> np.ndarray:
        if h not in self._payoffs:
            self._payoffs[h] = payoff_matrix(self.model, h)
        return self._payoffs[h]

    def choose(self, logrho: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        logrho = np.atleast_2d(logrho)
        uniforms = np.atleast_1d(uniforms)
        spec = self.spec
        if spec.kind is Kind.UNIFORM:
            return np.minimum((uniforms * self.model.n_experiments).astype(np.intp), self.model.n_experiments - 1)
        if spec.kind is Kind.EJS:
            return argmax_lowest(ejs_batch(self.model, logrho))
        if spec.kind in (Kind.KLZ, Kind.OPE):
            targets = self._targets(logrho)
            return self._verify(spec.kind, logrho, uniforms, targets)
        # two-phase: verify whichever hypothesis is above the threshold, explore otherwise
        above = logrho > np.log(spec.threshold)
        if np.any(above.sum(axis=1) > 1):
            raise StrategyError("more than one hypothesis exceeds the two-phase threshold")
        verifying = above.any(axis=1)
        out = np.empty(logrho.shape[0], dtype=np.intp)
        if np.any(~verifying):
            out[~verifying] = self._inner.choose(logrho[~verifying], uniforms[~verifying])
        if np.any(verifying):
            targets = np.argmax(above[verifying], axis=1)
            out[verifying] = self._verify(spec.verifier, logrho[verifying], uniforms[verifying], targets)
        return out

    def _targets(self, logrho: np.ndarray) -> np.ndarray:
        if self.spec.target is not None:
            return np.full(logrho.shape[0], self.spec.target, dtype=np.intp)
        return np.argmax(logrho, axis=1)

    def _verify(self, kind: Kind, logrho, uniforms, targets) -> np.ndarray:
        out = np.empty(logrho.shape[0], dtype=np.intp)
        for h in np.unique(targets):
            rows = targets == h
            h = int(h)
            if kind is Kind.OPE:
                out[rows] = inverse_cdf(self.solution(h).alpha_star, uniforms[rows])
            else:
                out[rows] = argmax_lowest(klz_payoffs(self.model, logrho[rows], h, self._payoff(h)))
        return out


# ---------------------------------------------------------------------------
# scalar selectors


@dataclass
class SelectionContext:
    belief: Belief
    model: HypothesisModel
    rng: np.random.Generator
    solutions: dict[int, GameSolution] = field(default_factory=dict)

    def solution(self, h: int) -> GameSolution:
        if h not in self.solutions:
            self.solutions[h] = solve_for(self.model, h)
        return self.solutions[h]


def select_ope(context: SelectionContext, solution: GameSolution) -> int:
    """Draw an experiment from the equilibrium mixture, ignoring the belief."""
    return int(inverse_cdf(solution.alpha_star, np.array([context.rng.random()]))[0])


def select_ejs(context: SelectionContext) -> int:
    return int(argmax_lowest(ejs_batch(context.model, context.belief.logrho[None, :]))[0])


def select_klz(context: SelectionContext, target) -> int:
    """Best response of the experiment player to the alternates mixture ``rho~``."""
    target = context.model.hypothesis_index(target)
    return int(argmax_lowest(klz_payoffs(context.model, context.belief.logrho[None, :], target))[0])


def select_uniform(context: SelectionContext) -> int:
    n = context.model.n_experiments
    return min(int(context.rng.random() * n), n - 1)


def select_two_phase(context: SelectionContext, spec: StrategySpec) -> int:
    if spec.kind is not Kind.TWO_PHASE:
        raise StrategyError(f"expected a two-phase spec, got {spec.kind.value}")
    above = np.flatnonzero(context.belief.logrho > np.log(spec.threshold))
    if above.size > 1:
        raise StrategyError("more than one hypothesis exceeds the two-phase threshold")
    if above.size == 0:
        return select(context, spec.inner)
    h = int(above[0])
    if spec.verifier is Kind.OPE:
        return select_ope(context, context.solution(h))
    return select_klz(context, h)


def select(context: SelectionContext, spec: StrategySpec) -> int:
    """Dispatch on ``spec.kind``."""
    kind = spec.kind
    if kind is Kind.TWO_PHASE:
        return select_two_phase(context, spec)
    if kind is Kind.EJS:
        return select_ejs(context)
    if kind is Kind.UNIFORM:
        return select_uniform(context)
    h = spec.target if spec.target is not None else int(np.argmax(context.belief.logrho))
    if kind is Kind.OPE:
        return select_ope(context, context.solution(h))
    return select_klz(context, h)
