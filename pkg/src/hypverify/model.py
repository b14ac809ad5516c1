"""Hypothesis/experiment models, log-domain beliefs and divergence primitives.

Every quantity is in nats. Beliefs are kept as log-probabilities so that
posteriors at very high confidence (alternate masses around ``exp(-2000)``)
remain representable.

Most functions come in two flavours: a batch form working on an array of
log-beliefs with shape ``(..., n_hypotheses)`` (used by the simulator) and a
scalar form taking a :class:`Belief`.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

ROW_TOLERANCE = 1e-9
NORMALIZATION_TOLERANCE = 1e-9


class ModelError(ValueError):
    """Base class for invalid models, beliefs and scenario documents."""

    code = "MODEL_ERROR"


class ScenarioValidationError(ModelError):
    code = "SCENARIO_INVALID"


class AssumptionViolation(ModelError):
    """A probability entry is not strictly positive.

    Bounded log-likelihood ratios require every ``p_h^u(y) > 0``; there is
    deliberately no switch to turn this check off.
    """

    code = "ASSUMPTION_VIOLATION"


class DivergenceInfinite(ModelError):
    code = "DIVERGENCE_INFINITE"


class InfiniteConfidence(ModelError):
    code = "INFINITE_CONFIDENCE"


class DegenerateBelief(ModelError):
    code = "DEGENERATE_BELIEF"


@dataclass(frozen=True, eq=False)
class HypothesisModel:
    """Finite model with ``prob[h, u, y] = p_h^u(y)``."""

    hypotheses: tuple[str, ...]
    experiments: tuple[str, ...]
    observations: tuple[str, ...]
    prob: np.ndarray
    log_prob: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        hyps = tuple(self.hypotheses)
        exps = tuple(self.experiments)
        obs = tuple(self.observations)
        for kind, labels in (("hypothesis", hyps), ("experiment", exps), ("observation", obs)):
            if len(set(labels)) != len(labels):
                raise ScenarioValidationError(f"duplicate {kind} labels: {labels}")
        if len(hyps) < 2 or len(exps) < 1 or len(obs) < 2:
            raise ScenarioValidationError(
                "need at least 2 hypotheses, 1 experiment and 2 observations, got "
                f"{len(hyps)}/{len(exps)}/{len(obs)}"
            )
        prob = np.array(self.prob, dtype=float)
        if prob.shape != (len(hyps), len(exps), len(obs)):
            raise ScenarioValidationError(
                f"prob has shape {prob.shape}, expected {(len(hyps), len(exps), len(obs))}"
            )
        if not np.all(np.isfinite(prob)):
            raise ScenarioValidationError("prob contains non-finite entries")
        bad = np.argwhere(prob <= 0.0)
        if bad.size:
            h, u, y = bad[0]
            raise AssumptionViolation(
                f"p[{hyps[h]}][{exps[u]}][{obs[y]}] = {prob[h, u, y]!r} is not strictly "
                "positive (bounded log-likelihood ratio assumption)"
            )
        sums = prob.sum(axis=2)
        off = np.argwhere(np.abs(sums - 1.0) > ROW_TOLERANCE)
        if off.size:
            h, u = off[0]
            raise ScenarioValidationError(
                f"row ({hyps[h]}, {exps[u]}) sums to {sums[h, u]!r}, not 1"
            )
        # Rows within tolerance are renormalized so downstream sums are exact to ~1e-16.
        prob = prob / sums[:, :, None]
        prob.setflags(write=False)
        log_prob = np.log(prob)
        log_prob.setflags(write=False)
        object.__setattr__(self, "hypotheses", hyps)
        object.__setattr__(self, "experiments", exps)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "log_prob", log_prob)

    @property
    def n_hypotheses(self) -> int:
        return len(self.hypotheses)

    @property
    def n_experiments(self) -> int:
        return len(self.experiments)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def hypothesis_index(self, label: str | int) -> int:
        return _index(self.hypotheses, label, "hypothesis")

    def experiment_index(self, label: str | int) -> int:
        return _index(self.experiments, label, "experiment")

    def observation_index(self, label: str | int) -> int:
        return _index(self.observations, label, "observation")


def _index(labels: Sequence[str], label: str | int, kind: str) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if 0 <= label < len(labels):
            return int(label)
        raise IndexError(f"{kind} index {label} out of range 0..{len(labels) - 1}")
    try:
        return labels.index(label)
    except ValueError:
        raise IndexError(f"unknown {kind} {label!r}; known: {', '.join(labels)}") from None


@dataclass(frozen=True, eq=False)
class Belief:
    """Posterior over hypotheses stored as natural-log probabilities."""

    logrho: np.ndarray

    def __post_init__(self):
        logrho = np.array(self.logrho, dtype=float)
        if logrho.ndim != 1 or logrho.size < 2:
            raise ModelError("belief must be a vector over at least two hypotheses")
        if np.any(logrho > 0.0) or np.any(np.isnan(logrho)):
            raise ModelError(f"invalid log-probabilities {logrho}")
        total = logsumexp(logrho)
        if abs(math.expm1(total)) > NORMALIZATION_TOLERANCE:
            raise ModelError(f"belief is not normalized (total mass {math.exp(total)!r})")
        logrho.setflags(write=False)
        object.__setattr__(self, "logrho", logrho)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "Belief":
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0):
            raise ModelError(f"negative probabilities {p}")
        with np.errstate(divide="ignore"):
            return cls(np.log(p))

    @classmethod
    def uniform(cls, n: int) -> "Belief":
        return cls(np.full(n, -math.log(n)))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logrho)

    def __len__(self):
        return self.logrho.size


# ---------------------------------------------------------------------------
# batch primitives on log-belief arrays of shape (..., H)


def normalize_log(logw: np.ndarray) -> np.ndarray:
    """Subtract the log-sum-exp along the last axis."""
    total = logsumexp(logw, axis=-1, keepdims=True)
    if np.any(~np.isfinite(total)):
        raise DegenerateBelief("unnormalized posterior has zero total mass")
    return logw - total


def log_complement(logrho: np.ndarray) -> np.ndarray:
    """``log(1 - rho_h)`` for every ``h``, computed as the log-mass of the others."""
    logrho = np.asarray(logrho, dtype=float)
    others = logrho[..., _others_index(logrho.shape[-1])]  # (..., H, H-1)
    with np.errstate(divide="ignore"):
        return logsumexp(others, axis=-1)


@functools.lru_cache(maxsize=None)
def _others_index(n: int) -> np.ndarray:
    return np.array([[j for j in range(n) if j != h] for h in range(n)])


def log_alternates(logrho: np.ndarray, h: int) -> np.ndarray:
    """``log rho~_j = log rho_j - log(1 - rho_h)`` for ``j != h``, shape (..., H-1)."""
    others = np.delete(np.asarray(logrho, dtype=float), h, axis=-1)
    with np.errstate(divide="ignore"):
        denom = logsumexp(others, axis=-1, keepdims=True)
    if np.any(denom == -np.inf):
        raise DegenerateBelief(f"belief is concentrated on hypothesis {h}; alternates undefined")
    return others - denom


def confidence_batch(logrho: np.ndarray, h: int) -> np.ndarray:
    """Bayesian log-likelihood ratio ``log(rho_h / (1 - rho_h))``."""
    logrho = np.asarray(logrho, dtype=float)
    others = np.delete(logrho, h, axis=-1)
    with np.errstate(divide="ignore"):
        comp = logsumexp(others, axis=-1)
    own = logrho[..., h]
    if np.any(own == -np.inf) or np.any(comp == -np.inf):
        raise InfiniteConfidence(f"confidence on hypothesis {h} is infinite (rho_h in {{0, 1}})")
    return own - comp


def all_confidences(logrho: np.ndarray) -> np.ndarray:
    """Confidence on every hypothesis; -inf / +inf at the simplex boundary."""
    logrho = np.asarray(logrho, dtype=float)
    with np.errstate(invalid="ignore"):
        out = logrho - log_complement(logrho)
    # -inf - (-inf) only occurs when a single hypothesis holds all mass
    return np.where(np.isnan(out), -np.inf, out)


def weighted_confidence(logrho: np.ndarray) -> np.ndarray:
    """``sum_i rho_i * C_i(rho)`` over the support, with ``0 * log 0 = 0``.

    Rows with single-point support give ``nan``; callers treat them as frozen.
    """
    logrho = np.asarray(logrho, dtype=float)
    comp = log_complement(logrho)
    rho = np.exp(logrho)
    with np.errstate(invalid="ignore"):
        terms = rho * (logrho - comp)
    terms = np.where(rho > 0.0, terms, 0.0)
    return terms.sum(axis=-1)


def bayes_update_batch(model: HypothesisModel, logrho: np.ndarray, u, y) -> np.ndarray:
    """Posterior after observing ``y`` from experiment ``u``; ``u``/``y`` may be arrays."""
    lp = model.log_prob[:, u, y]
    lp = np.moveaxis(np.asarray(lp), 0, -1)
    return normalize_log(logrho + lp)


def _divergence_to_mixture(model: HypothesisModel, alt: np.ndarray, h: int) -> np.ndarray:
    """``D(p_h^u || sum_j alt_j p_j^u)`` for all ``u``, shape (..., U), in the dtype of ``alt``.

    With ``t = (q - p_h) / p_h`` the divergence is ``sum_y p_h (t - log1p(t))``
    minus ``sum_y (q - p_h)``. The first sum has nonnegative terms, so it stays
    accurate when the mixture is close to ``p_h``; the second is zero up to the
    rounding in the stored row sums and is subtracted explicitly.
    """
    prob = model.prob.astype(alt.dtype)
    p_h = prob[h]  # (U, Y)
    alt_prob = np.delete(prob, h, axis=0)  # (H-1, U, Y)
    t = np.tensordot(alt, (alt_prob - p_h) / p_h, axes=([-1], [0]))  # (..., U, Y)
    defect = np.tensordot(alt, alt_prob.sum(axis=-1) - p_h.sum(axis=-1), axes=([-1], [0]))  # (..., U)
    return np.sum(p_h * (t - np.log1p(t)), axis=-1) - defect


def _alternate_weights(logrho: np.ndarray, h: int) -> tuple[np.ndarray, np.ndarray]:
    """``rho~`` in extended precision (where available) and a mask of rows where it exists."""
    others = np.delete(np.asarray(logrho, dtype=np.longdouble), h, axis=-1)
    peak = others.max(axis=-1, keepdims=True)
    live = np.isfinite(peak[..., 0])
    w = np.exp(others - np.where(np.isfinite(peak), peak, 0.0))
    with np.errstate(invalid="ignore"):
        return w / w.sum(axis=-1, keepdims=True), live


def expected_reward_batch(model: HypothesisModel, logrho: np.ndarray, h: int) -> np.ndarray:
    """``r(rho, u)`` for all experiments, shape (..., U).

    When the alternates' mixture nearly matches ``p_h`` the reward is tiny and
    sensitive to the last bit of ``rho~``, so the alternate weights and the
    divergence are formed in extended precision.
    """
    alt, live = _alternate_weights(logrho, h)
    if not np.all(live):
        raise DegenerateBelief(f"belief is concentrated on hypothesis {h}; alternates undefined")
    return _divergence_to_mixture(model, alt, h).astype(float)


def ejs_batch(model: HypothesisModel, logrho: np.ndarray) -> np.ndarray:
    """EJS value for all experiments, shape (..., U).

    Enumerating outcomes, ``m(y) * rho'_i = rho_i p_i(y)``, so the expected gain
    in weighted confidence collapses to ``sum_i rho_i r_i(rho, u)``. Hypotheses
    with no mass, or with all the mass (the belief cannot move), contribute 0.
    """
    logrho = np.asarray(logrho, dtype=float)
    rho = np.exp(logrho)
    out = np.zeros(logrho.shape[:-1] + (model.n_experiments,))
    for h in range(model.n_hypotheses):
        alt, live = _alternate_weights(logrho, h)
        live &= rho[..., h] > 0
        alt = np.where(live[..., None], alt, 0.0).astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = rho[..., h, None] * _divergence_to_mixture(model, alt, h)
        out += np.where(live[..., None], term, 0.0)
    return out


# ---------------------------------------------------------------------------
# scalar API


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """``D(p || q)`` in nats; terms with ``p(y) = 0`` contribute nothing."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        raise DivergenceInfinite("q(y) = 0 where p(y) > 0")
    return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


def log_likelihood_ratio(model: HypothesisModel, i, j, u, y) -> float:
    i = model.hypothesis_index(i)
    j = model.hypothesis_index(j)
    u = model.experiment_index(u)
    y = model.observation_index(y)
    return float(model.log_prob[i, u, y] - model.log_prob[j, u, y])


def assumption_bound(model: HypothesisModel) -> float:
    """Largest absolute log-likelihood ratio over all hypothesis pairs, experiments and outcomes."""
    lp = model.log_prob
    return float(np.max(lp.max(axis=0) - lp.min(axis=0)))


def bayes_update(belief: Belief, u, y, model: HypothesisModel) -> Belief:
    u = model.experiment_index(u)
    y = model.observation_index(y)
    return Belief(bayes_update_batch(model, belief.logrho, u, y))


def bllr(belief: Belief, h: int) -> float:
    return float(confidence_batch(belief.logrho, int(h)))


def alternates_distribution(belief: Belief, h: int) -> np.ndarray:
    return np.exp(log_alternates(belief.logrho, int(h)))


def expected_reward(belief: Belief, u, h: int, model: HypothesisModel) -> float:
    u = model.experiment_index(u)
    h = model.hypothesis_index(h)
    return float(expected_reward_batch(model, belief.logrho, h)[u])


def ejs_value(belief: Belief, u, model: HypothesisModel) -> float:
    u = model.experiment_index(u)
    return float(ejs_batch(model, belief.logrho)[u])


# ---------------------------------------------------------------------------
# scenario documents


def load_scenario(text: str) -> tuple[HypothesisModel, Belief]:
    """Parse a JSON scenario document into a validated model and prior."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioValidationError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioValidationError("scenario must be a JSON object")
    missing = [k for k in ("hypotheses", "experiments", "observations", "prob") if k not in doc]
    if missing:
        raise ScenarioValidationError(f"missing keys: {', '.join(missing)}")
    hyps, exps, obs = doc["hypotheses"], doc["experiments"], doc["observations"]
    for key, labels in (("hypotheses", hyps), ("experiments", exps), ("observations", obs)):
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ScenarioValidationError(f"{key} must be a list of strings")
        if len(set(labels)) != len(labels):
            raise ScenarioValidationError(f"duplicate labels in {key}")

    table = doc["prob"]
    if not isinstance(table, dict) or set(table) != set(hyps):
        raise ScenarioValidationError("prob must map exactly the listed hypotheses")
    prob = np.empty((len(hyps), len(exps), len(obs)))
    for a, h in enumerate(hyps):
        rows = table[h]
        if not isinstance(rows, dict) or set(rows) != set(exps):
            raise ScenarioValidationError(f"prob[{h}] must map exactly the listed experiments")
        for b, u in enumerate(exps):
            row = rows[u]
            if not isinstance(row, list) or len(row) != len(obs):
                raise ScenarioValidationError(
                    f"prob[{h}][{u}] must list {len(obs)} probabilities"
                )
            try:
                prob[a, b] = [float(v) for v in row]
            except (TypeError, ValueError):
                raise ScenarioValidationError(f"prob[{h}][{u}] has non-numeric entries") from None

    model = HypothesisModel(hyps, exps, obs, prob)

    if doc.get("prior") is None:
        prior = Belief.uniform(len(hyps))
    else:
        p = doc["prior"]
        if not isinstance(p, list) or len(p) != len(hyps):
            raise ScenarioValidationError("prior must list one probability per hypothesis")
        p = np.asarray(p, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > ROW_TOLERANCE:
            raise ScenarioValidationError(f"prior {p.tolist()} is not a distribution")
        prior = Belief.from_probs(p / p.sum())
    return model, prior


BUNDLED = ("setup1.json", "setup2.json")


def read_scenario(path: str | Path) -> tuple[HypothesisModel, Belief]:
    """Load a scenario from disk, falling back to the bundled files by name."""
    path = Path(path)
    if path.exists():
        return load_scenario(path.read_text())
    if path.name in BUNDLED and str(path) == path.name:
        return load_bundled(path.name)
    raise FileNotFoundError(f"cannot read scenario {str(path)!r}")


def load_bundled(name: str) -> tuple[HypothesisModel, Belief]:
    if not name.endswith(".json"):
        name += ".json"
    text = resources.files("hypverify.scenarios").joinpath(name).read_text()
    return load_scenario(text)
