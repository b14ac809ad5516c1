"""Seeded Monte Carlo engine for verification experiments.

Trials are simulated in lock-step batches of :data:`BLOCK_TRIALS` rows. Every
trial owns a private generator derived from ``(seed, trial_index)`` and
consumes exactly two uniforms per step (policy randomness, then the
observation), drawn in fixed-size chunks. Results therefore depend only on
the configuration and the trial index, never on how trials are spread over
worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .game import GameSolution, solve_for
from .model import (
    Belief,
    HypothesisModel,
    all_confidences,
    bayes_update_batch,
    confidence_batch,
    log_alternates,
)
from .strategies import Policy, StrategySpec

BLOCK_TRIALS = 256
VARIATE_CHUNK = 512
DEFAULT_CAP = 10**6


class ConfigError(ValueError):
    code = "BAD_CONFIG"


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    model: HypothesisModel
    true_hypothesis: int
    strategy: StrategySpec
    trials: int = 1000
    prior: Belief | None = None
    horizons: tuple[int, ...] = ()
    thresholds: tuple[float, ...] = ()
    cap: int = DEFAULT_CAP
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        h = self.model.hypothesis_index(self.true_hypothesis)
        object.__setattr__(self, "true_hypothesis", h)
        if self.prior is None:
            object.__setattr__(self, "prior", Belief.uniform(self.model.n_hypotheses))
        elif len(self.prior) != self.model.n_hypotheses:
            raise ConfigError("prior does not match the number of hypotheses")
        hz = tuple(sorted({int(n) for n in self.horizons}))
        th = tuple(sorted({float(t) for t in self.thresholds}))
        object.__setattr__(self, "horizons", hz)
        object.__setattr__(self, "thresholds", th)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if hz and hz[0] < 1:
            raise ConfigError("horizons must be >= 1")
        if not hz and not th:
            raise ConfigError("need a horizon or a non-empty threshold grid")
        if self.cap < 1:
            raise ConfigError("step cap must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class TrajectoryRecord:
    # (n, experiment, observation, confidence on the true hypothesis after step n)
    steps: list[tuple[int, int, int, float]]
    # X_j(n) for n = 1..len(steps)+1, rows indexed by n-1
    log_belief_trace: np.ndarray | None = None
    stopped_at: int | None = None
    stop_correct: bool | None = None
    censored: bool = False


@dataclass
class RateCurve:
    horizons: list[int]
    j_n: list[float]
    stderr: list[float]
    trials: int


@dataclass
class StoppingCurve:
    thresholds: list[float]
    mean_n: list[float]
    stderr_n: list[float]
    normalized: list[float]
    error_rate: list[float]
    censored: list[int]
    trials: int

    @property
    def lower_bound_flags(self) -> list[bool]:
        """True where censored trials make ``mean_n`` a lower bound."""
        return [c > 0 for c in self.censored]


@dataclass
class DiagnosticCurve:
    horizons: list[int]
    values: list[float]
    stderr: list[float]
    trials: int

    @property
    def final(self) -> float:
        return self.values[-1]


@dataclass
class Snapshots:
    """Log-beliefs ``log rho(n+1)`` after ``n`` observations, ``n`` in ``[0] + horizons``."""

    horizons: list[int]
    logrho: np.ndarray  # (trials, 1 + len(horizons), H)

    def log_belief_trace(self, h: int) -> np.ndarray:
        """``X_j`` at every snapshot: ``log rho_j(1)`` plus accumulated ``log p_j/p_h``."""
        lr = self.logrho
        return lr - lr[:, :, h : h + 1] + lr[:, :1, h : h + 1]


@dataclass
class RateBoundReport:
    rates: dict[int, float]
    stderr: dict[int, float]
    game_values: dict[int, float]
    lhs: float
    rhs: float
    lhs_stderr: float
    holds: bool


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Private stream of trial ``trial_index``; child ``trial_index`` of ``SeedSequence(seed)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_index,)))


def log_grid(n: int, points: int = 25) -> tuple[int, ...]:
    """Roughly log-spaced integers in ``[1, n]``, always including ``n``."""
    grid = np.unique(np.round(np.geomspace(1, n, num=min(points, n))).astype(int))
    return tuple(int(v) for v in grid if 1 <= v <= n) + ((n,) if grid[-1] != n else ())


@dataclass
class _BlockOutput:
    snapshots: np.ndarray | None = None
    stop_n: np.ndarray | None = None
    correct: np.ndarray | None = None
    trace_u: list = field(default_factory=list)
    trace_y: list = field(default_factory=list)
    trace_logrho: list = field(default_factory=list)


class _Variates:
    def __init__(self, config: SimulationConfig, indices):
        self.gens = [trial_rng(config.seed, int(i)) for i in indices]
        self.buf = np.empty((len(self.gens), VARIATE_CHUNK, 2))

    def at(self, n: int, rows: np.ndarray) -> np.ndarray:
        pos = n % VARIATE_CHUNK
        if pos == 0:
            for r in rows:
                self.buf[r] = self.gens[r].random((VARIATE_CHUNK, 2))
        return self.buf[rows, pos]


def _simulate_block(config: SimulationConfig, indices, mode: str, trace: bool = False) -> _BlockOutput:
    model = config.model
    H = config.true_hypothesis
    policy = Policy(config.strategy, model)
    T = len(indices)
    variates = _Variates(config, indices)
    obs_cdf = np.cumsum(model.prob[H], axis=1)
    obs_cdf[:, -1] = 1.0
    logrho = np.tile(config.prior.logrho, (T, 1))
    out = _BlockOutput()
    if trace:
        out.trace_logrho.append(logrho[0].copy())

    def step(n, rows, lr):
        v = variates.at(n, rows)
        u = policy.choose(lr, v[:, 0])
        y = np.sum(v[:, 1:2] >= obs_cdf[u], axis=1)
        new = bayes_update_batch(model, lr, u, y)
        if trace:
            out.trace_u.append(int(u[0]))
            out.trace_y.append(int(y[0]))
            out.trace_logrho.append(new[0].copy())
        return new

    if mode == "horizon":
        horizons = config.horizons
        slot = {n: k + 1 for k, n in enumerate(horizons)}
        snaps = np.empty((T, len(horizons) + 1, model.n_hypotheses))
        snaps[:, 0] = logrho
        rows = np.arange(T)
        for n in range(horizons[-1]):
            logrho = step(n, rows, logrho)
            if n + 1 in slot:
                snaps[:, slot[n + 1]] = logrho
        out.snapshots = snaps
        return out

    thr = np.asarray(config.thresholds)
    stop_n = np.full((T, thr.size), -1, dtype=np.int64)
    correct = np.zeros((T, thr.size), dtype=bool)

    def check(n, rows, lr):
        conf = all_confidences(lr)
        best = conf.max(axis=1)
        arg = np.argmax(conf, axis=1)
        hit = (stop_n[rows] < 0) & (best[:, None] > thr[None, :])
        r, k = np.nonzero(hit)
        stop_n[rows[r], k] = n
        correct[rows[r], k] = arg[r] == H

    rows = np.arange(T)
    check(0, rows, logrho)
    n = 0
    while n < config.cap:
        active = np.flatnonzero(np.any(stop_n < 0, axis=1))
        if active.size == 0:
            break
        logrho[active] = step(n, active, logrho[active])
        n += 1
        check(n, active, logrho[active])
    out.stop_n = stop_n
    out.correct = correct
    return out


def _run_block(args):
    config, indices, mode = args
    return _simulate_block(config, indices, mode)


def _run_all(config: SimulationConfig, mode: str) -> list[_BlockOutput]:
    blocks = [
        (config, np.arange(s, min(s + BLOCK_TRIALS, config.trials)), mode)
        for s in range(0, config.trials, BLOCK_TRIALS)
    ]
    if config.workers == 1 or len(blocks) == 1:
        return [_run_block(b) for b in blocks]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_run_block, blocks))


def _mean_stderr(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])


def run_trial(config: SimulationConfig, trial_index: int) -> TrajectoryRecord:
    """Replay a single trial step by step.

    Uses the same stream as trial ``trial_index`` of a batch run, so the
    record agrees with the aggregated experiments. In stopping mode the trial
    runs until the largest threshold is crossed or the cap is hit.
    """
    if not 0 <= trial_index:
        raise ConfigError("trial index must be non-negative")
    mode = "horizon" if config.horizons else "stop"
    res = _simulate_block(config, np.array([trial_index]), mode, trace=True)
    H = config.true_hypothesis
    lr = np.array(res.trace_logrho)
    conf = confidence_batch(lr[1:], H) if len(lr) > 1 else np.empty(0)
    steps = [(n + 1, u, y, float(c)) for n, (u, y, c) in enumerate(zip(res.trace_u, res.trace_y, conf))]
    x = lr - lr[:, H : H + 1] + lr[0, H]
    record = TrajectoryRecord(steps=steps, log_belief_trace=x)
    if mode == "stop":
        n_stop = int(res.stop_n[0, -1])
        if n_stop < 0:
            record.censored = True
        else:
            record.stopped_at = n_stop
            record.stop_correct = bool(res.correct[0, -1])
    return record


def collect_snapshots(config: SimulationConfig) -> Snapshots:
    if not config.horizons:
        raise ConfigError("horizon mode requires at least one horizon")
    outs = _run_all(config, "horizon")
    return Snapshots(list(config.horizons), np.concatenate([o.snapshots for o in outs]))


def rate_from_snapshots(snap: Snapshots, h: int, trials: int) -> RateCurve:
    conf = confidence_batch(snap.logrho, h)
    n = np.asarray(snap.horizons, dtype=float)
    per_trial = (conf[:, 1:] - conf[:, :1]) / n
    mean, se = _mean_stderr(per_trial)
    return RateCurve(list(snap.horizons), mean.tolist(), se.tolist(), trials)


def run_rate_experiment(config: SimulationConfig) -> RateCurve:
    """Monte Carlo ``J_N`` under the configured true hypothesis at every horizon."""
    snap = collect_snapshots(config)
    return rate_from_snapshots(snap, config.true_hypothesis, config.trials)


def run_stopping_experiment(config: SimulationConfig) -> StoppingCurve:
    """Stop at the first ``n`` where some confidence exceeds ``ln L``; ``N`` counts observations.

    Censored trials enter the mean at the cap (a lower bound) and do not count
    as errors.
    """
    if not config.thresholds:
        raise ConfigError("stopping mode requires a threshold grid")
    outs = _run_all(config, "stop")
    stop_n = np.concatenate([o.stop_n for o in outs])
    correct = np.concatenate([o.correct for o in outs])
    censored = stop_n < 0
    n_eff = np.where(censored, config.cap, stop_n).astype(float)
    mean, se = _mean_stderr(n_eff)
    errors = (~censored & ~correct).sum(axis=0) / config.trials
    thr = np.asarray(config.thresholds)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(thr != 0, mean / np.where(thr != 0, thr, 1.0), np.nan)
    return StoppingCurve(
        thresholds=thr.tolist(),
        mean_n=mean.tolist(),
        stderr_n=se.tolist(),
        normalized=normalized.tolist(),
        error_rate=errors.tolist(),
        censored=censored.sum(axis=0).astype(int).tolist(),
        trials=config.trials,
    )


def stability_from_snapshots(snap: Snapshots, solution: GameSolution, trials: int) -> DiagnosticCurve:
    h = solution.target
    log_alt = log_alternates(snap.logrho[:, 1:], h)
    n = np.asarray(snap.horizons, dtype=float)
    per_trial = (log_alt @ solution.beta_star) / n
    mean, se = _mean_stderr(per_trial)
    return DiagnosticCurve(list(snap.horizons), mean.tolist(), se.tolist(), trials)


def stability_diagnostic(config: SimulationConfig, solution: GameSolution | None = None) -> DiagnosticCurve:
    """``(1/N) sum_j beta*_j E[log rho~_j(N+1)]`` at every horizon; tends to 0 for an optimal policy."""
    if solution is None:
        solution = solve_for(config.model, config.true_hypothesis)
    if solution.target != config.true_hypothesis:
        raise ConfigError("solution target differs from the true hypothesis")
    return stability_from_snapshots(collect_snapshots(config), solution, config.trials)


def rate_bound_check(
    model: HypothesisModel,
    strategy,
    *,
    trials: int,
    horizon: int,
    prior: Belief | None = None,
    seed: int = 0,
    workers: int = 1,
) -> RateBoundReport:
    """Check ``sum_h rho_h(1) J(g, h) <= sum_h rho_h(1) R*(h)`` at the given horizon.

    ``strategy`` is a :class:`StrategySpec` or a callable mapping the true
    hypothesis to one (for hypothesis-aware oracle policies). The bound is
    met when the left side is at most the right side plus three standard errors.
    """
    prior = prior if prior is not None else Belief.uniform(model.n_hypotheses)
    weights = prior.probs
    rates, ses, values = {}, {}, {}
    for h in range(model.n_hypotheses):
        if weights[h] == 0:
            continue
        spec = strategy(h) if callable(strategy) else strategy
        cfg = SimulationConfig(
            model, h, spec, trials=trials, prior=prior, horizons=(horizon,), seed=seed, workers=workers
        )
        curve = run_rate_experiment(cfg)
        rates[h], ses[h] = curve.j_n[-1], curve.stderr[-1]
        values[h] = solve_for(model, h).value
    lhs = sum(weights[h] * rates[h] for h in rates)
    rhs = sum(weights[h] * values[h] for h in values)
    se = math.sqrt(sum((weights[h] * ses[h]) ** 2 for h in ses))
    return RateBoundReport(rates, ses, values, lhs, rhs, se, lhs <= rhs + 3 * se)


# ---------------------------------------------------------------------------
# CSV output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def rate_csv(curve: RateCurve) -> str:
    rows = [(n, j, s, curve.trials) for n, j, s in zip(curve.horizons, curve.j_n, curve.stderr)]
    return _csv(["N", "j_n_nats_per_step", "stderr", "trials"], rows)


def stopping_csv(curve: StoppingCurve) -> str:
    rows = zip(
        curve.thresholds, curve.mean_n, curve.stderr_n, curve.normalized, curve.error_rate, curve.censored
    )
    return _csv(["ln_L", "mean_N", "stderr_N", "normalized", "error_rate", "censored"], rows)


def diagnostic_csv(curve: DiagnosticCurve) -> str:
    rows = [(n, v, s, curve.trials) for n, v, s in zip(curve.horizons, curve.values, curve.stderr)]
    return _csv(["N", "diagnostic_nats_per_step", "stderr", "trials"], rows)
