"""Analytic abstention curves and Monte-Carlo checks of the selective-ensemble guarantees.

Guarantees checked here, for a selective ensemble of ``n`` models at level
``alpha``:

* **mode agreement**: at every input, the probability (over ensemble draws)
  that the ensemble predicts a label *different* from the mode predictor,
  without abstaining, is at most ``alpha``;
* **loss variance**: the expected rate of not returning the mode label
  (abstentions included) is at most ``alpha + beta``, where ``beta`` bounds
  the expected abstention rate;
* **pairwise consistency**: two independently drawn ensembles return
  different outcomes (abstention counts as an outcome) with expected rate
  at most ``2 (alpha + beta)``.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .ensemble import ABSTAIN, model_votes, sample_ensemble, selective_from_votes, vote_counts
from .pipeline import Dataset, ModelPool, PipelineConfig, StateDistribution, Trainer, train_model
from .stats import binom_p_value, p_value_table


@dataclass(frozen=True)
class CurvePoint:
    p: float
    n: int
    alpha: float
    abstention_prob: float
    consistency_lower_bound: float


@dataclass(frozen=True)
class BoundCheckReport:
    name: str
    empirical_rate: float
    bound: float
    trials: int
    slack: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.empirical_rate <= self.bound + self.slack

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "empirical_rate": self.empirical_rate,
            "bound": self.bound,
            "slack": self.slack,
            "trials": self.trials,
            "passed": self.passed,
            "details": self.details,
        }


def _binom_pmf(k: int, n: int, p: float) -> float:
    if p == 0.0:
        return 1.0 if k == 0 else 0.0
    if p == 1.0:
        return 1.0 if k == n else 0.0
    try:
        return float(math.comb(n, k)) * p**k * (1.0 - p) ** (n - k)
    except OverflowError:
        log = (
            math.lgamma(n + 1)
            - math.lgamma(k + 1)
            - math.lgamma(n - k + 1)
            + k * math.log(p)
            + (n - k) * math.log1p(-p)
        )
        return math.exp(log)


def _validate(p: float, n: int, alpha: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"agreement probability must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def certified_vote_counts(n: int, alpha: float) -> list[int]:
    """Mode-class vote counts k in [0, n] for which a binary n-vote split is certified."""
    return [k for k in range(n + 1) if binom_p_value(max(k, n - k), n) <= alpha]


def abstention_probability(p: float, n: int, alpha: float) -> float:
    """Probability that an n-model selective ensemble abstains when each member
    independently votes the mode class with probability ``p`` (else the runner-up)."""
    _validate(p, n, alpha)
    passing = set(certified_vote_counts(n, alpha))
    if not passing:
        return 1.0
    total = math.fsum(_binom_pmf(k, n, p) for k in range(n + 1) if k not in passing)
    return min(1.0, max(0.0, total))


def consistency_lower_bound(alpha: float, beta: float) -> float:
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return max(0.0, 1.0 - 2.0 * (alpha + beta))


def loss_variance_bound(alpha: float, beta: float) -> float:
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return min(1.0, alpha + beta)


def abstention_curves(n_list, alpha_list, grid_resolution: int = 101) -> list[CurvePoint]:
    """Abstention probability and the implied consistency bound on a uniform grid p in [0.5, 1].

    ``beta`` in the consistency bound is the analytic abstention probability.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    grid = np.linspace(0.5, 1.0, grid_resolution)
    rows = []
    for n in n_list:
        for alpha in alpha_list:
            for p in grid:
                beta = abstention_probability(float(p), int(n), float(alpha))
                rows.append(
                    CurvePoint(float(p), int(n), float(alpha), beta, consistency_lower_bound(alpha, beta))
                )
    return rows


def binomial_slack(alpha: float, trials: int) -> float:
    """Three standard deviations of a Bernoulli(alpha) rate estimated from ``trials`` draws."""
    return 3.0 * math.sqrt(alpha * (1.0 - alpha) / trials)


EnsembleSource = Callable[[int, int], ModelPool]
"""``source(draw_offset, n)`` returns the ensemble built from draws ``[draw_offset, draw_offset + n)``."""


def fresh_source(config, train, dist, *, trainer: Trainer = train_model, workers: int = 1) -> EnsembleSource:
    def source(offset: int, n: int) -> ModelPool:
        return sample_ensemble(config, train, dist, n, offset, trainer=trainer, workers=workers)

    return source


def pool_source(pool: ModelPool) -> EnsembleSource:
    """Serve consecutive slices of an already trained pool as independent draws."""

    def source(offset: int, n: int) -> ModelPool:
        if offset + n > len(pool):
            raise ValueError(f"pool of {len(pool)} models cannot serve draws [{offset}, {offset + n})")
        return pool.select(range(offset, offset + n))

    return source


def _selective_labels(pool, X, alpha, table):
    votes = model_votes(pool.models, X)
    return selective_from_votes(votes, pool.num_classes, alpha, table)[0]


def check_mode_agreement_bound(
    config: PipelineConfig,
    train: Dataset,
    dist: StateDistribution,
    n: int,
    alpha: float,
    test: Dataset,
    trials: int,
    oracle_samples: int,
    *,
    trainer: Trainer = train_model,
    workers: int = 1,
    source: EnsembleSource | None = None,
) -> BoundCheckReport:
    """Estimate, per test point, how often a fresh ensemble contradicts the mode label.

    The mode predictor is estimated from draws ``[0, oracle_samples)``; trial
    ``t`` uses draws ``oracle_samples + t*n ...``, so no state is shared. The
    reported rate is the worst point's, since the guarantee holds pointwise.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if source is None:
        source = fresh_source(config, train, dist, trainer=trainer, workers=workers)
    X = test.features
    oracle = source(0, oracle_samples)
    counts = vote_counts(model_votes(oracle.models, X), oracle.num_classes)
    mode = np.argmax(counts, axis=0)
    agreement = counts.max(axis=0) / oracle_samples
    table = p_value_table(n)
    contradictions = np.zeros(len(test))
    abstentions = np.zeros(len(test))
    for t in range(trials):
        labels = _selective_labels(source(oracle_samples + t * n, n), X, alpha, table)
        contradictions += (labels != ABSTAIN) & (labels != mode)
        abstentions += labels == ABSTAIN
    rates = contradictions / trials
    worst = int(np.argmax(rates))
    return BoundCheckReport(
        name="mode_agreement",
        empirical_rate=float(rates[worst]),
        bound=alpha,
        trials=trials,
        slack=binomial_slack(alpha, trials),
        details={
            "n": n,
            "alpha": alpha,
            "oracle_samples": oracle_samples,
            "worst_point": worst,
            "worst_point_mode_agreement": float(agreement[worst]),
            "mean_rate": float(rates.mean()),
            "abstention_rate": float(abstentions.mean() / trials),
            "loss_variance": float((contradictions + abstentions).mean() / trials),
            "loss_variance_bound": loss_variance_bound(alpha, float(abstentions.mean() / trials)),
            "beta_is_estimate": True,
        },
    )


def check_pairwise_consistency_bound(
    config: PipelineConfig,
    train: Dataset,
    dist: StateDistribution,
    n: int,
    alpha: float,
    test: Dataset,
    trials: int,
    draw_offset: int = 0,
    *,
    same_streams: bool = False,
    trainer: Trainer = train_model,
    workers: int = 1,
    source: EnsembleSource | None = None,
) -> BoundCheckReport:
    """Mean strict disagreement between independently drawn ensemble pairs versus ``2(alpha + beta_hat)``.

    ``beta_hat`` is the mean abstention rate of the same ensembles.
    ``same_streams`` gives both members of a pair identical states (a control
    whose disagreement must be zero).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if source is None:
        source = fresh_source(config, train, dist, trainer=trainer, workers=workers)
    X = test.features
    table = p_value_table(n)
    disagree = 0.0
    abstain = 0.0
    for t in range(trials):
        off_a = draw_offset + 2 * t * n
        off_b = off_a if same_streams else off_a + n
        a = _selective_labels(source(off_a, n), X, alpha, table)
        b = _selective_labels(source(off_b, n), X, alpha, table)
        disagree += float(np.mean(a != b))
        abstain += float(np.mean(a == ABSTAIN) + np.mean(b == ABSTAIN)) / 2.0
    beta_hat = abstain / trials
    return BoundCheckReport(
        name="pairwise_consistency",
        empirical_rate=disagree / trials,
        bound=2.0 * (alpha + beta_hat),
        trials=trials,
        slack=binomial_slack(alpha, trials),
        details={
            "n": n,
            "alpha": alpha,
            "beta_hat": beta_hat,
            "beta_is_estimate": True,
            "consistency_lower_bound": consistency_lower_bound(alpha, beta_hat),
            "same_streams": same_streams,
        },
    )
