"""Selective ensembles: creation, prediction with abstention, and disagreement accounting."""

from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .pipeline import (
    Dataset,
    MlpModel,
    ModelPool,
    PipelineConfig,
    RandomState,
    StateDistribution,
    Trainer,
    sample_state,
    train_many,
    train_model,
)
from .stats import VoteTally, binom_p_value, p_value_table, tally, top_two

ABSTAIN = -1
"""Label used for abstentions in label arrays and reports."""

ABS_NEQ = "abs_neq"
STRICT_NEQ = "strict_neq"


@dataclass(frozen=True)
class SelectiveDecision:
    label: int | None  # None means the ensemble abstained
    p_value: float
    tally: VoteTally
    alpha: float

    def __post_init__(self):
        if self.label is None and not self.p_value > self.alpha:
            raise ValueError("abstention requires p_value > alpha")
        if self.label is not None and not self.p_value <= self.alpha:
            raise ValueError("a prediction requires p_value <= alpha")

    @property
    def abstained(self) -> bool:
        return self.label is None

    def as_label(self) -> int:
        return ABSTAIN if self.label is None else self.label


def _as_label(d) -> int:
    if isinstance(d, SelectiveDecision):
        return d.as_label()
    if d is None:
        return ABSTAIN
    return int(d)


def abs_neq(d1, d2) -> bool:
    """True iff neither side abstains and the two labels differ.

    Accepts :class:`SelectiveDecision` objects, plain labels, ``None`` or
    :data:`ABSTAIN`.
    """
    a, b = _as_label(d1), _as_label(d2)
    return a != ABSTAIN and b != ABSTAIN and a != b


def strict_neq(d1, d2) -> bool:
    return _as_label(d1) != _as_label(d2)


# ---------------------------------------------------------------------------
# Creation
# ---------------------------------------------------------------------------


def create_ensemble(
    config: PipelineConfig,
    train: Dataset,
    states: Sequence[RandomState],
    *,
    trainer: Trainer = train_model,
    workers: int = 1,
) -> ModelPool:
    if not states:
        raise ValueError("an ensemble needs at least one random state")
    models = train_many(config, train, states, trainer=trainer, workers=workers)
    return ModelPool(tuple(models), tuple(states), config.fingerprint(), config)


def sample_states(dist: StateDistribution, n: int, draw_offset: int = 0) -> list[RandomState]:
    return [sample_state(dist, draw_offset + i) for i in range(n)]


def sample_ensemble(
    config: PipelineConfig,
    train: Dataset,
    dist: StateDistribution,
    n: int,
    draw_offset: int = 0,
    *,
    trainer: Trainer = train_model,
    workers: int = 1,
) -> ModelPool:
    if n < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n}")
    return create_ensemble(
        config, train, sample_states(dist, n, draw_offset), trainer=trainer, workers=workers
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def model_votes(models: Sequence[MlpModel], X) -> np.ndarray:
    """Predicted labels, shape (num_models, num_points)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack([m.predict(X) for m in models])


def vote_counts(votes: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class counts, shape (num_classes, num_points), from a (models, points) vote matrix."""
    return np.stack([(votes == c).sum(axis=0) for c in range(num_classes)])


def selective_from_votes(
    votes: np.ndarray, num_classes: int, alpha: float, table: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised selective prediction over many points.

    Returns ``(labels, p_values)``; abstentions carry :data:`ABSTAIN`.
    """
    _check_alpha(alpha)
    counts = vote_counts(votes, num_classes)
    order = np.argsort(-counts, axis=0, kind="stable")
    cols = np.arange(counts.shape[1])
    n_a = counts[order[0], cols]
    n_b = counts[order[1], cols]
    if table is None:
        table = p_value_table(votes.shape[0])
    p = table[n_a, n_a + n_b]
    labels = np.where(p <= alpha, order[0], ABSTAIN)
    return labels, p


def plurality_from_votes(votes: np.ndarray, num_classes: int) -> np.ndarray:
    return np.argmax(vote_counts(votes, num_classes), axis=0)


def _point_tally(pool: ModelPool, x) -> VoteTally:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single feature vector")
    return tally([m.predict(x) for m in pool.models], pool.num_classes)


def selective_predict(pool: ModelPool, alpha: float, x) -> SelectiveDecision:
    _check_alpha(alpha)
    t = _point_tally(pool, x)
    class_a, n_a, _, n_b = top_two(t)
    p = binom_p_value(n_a, n_a + n_b)
    return SelectiveDecision(class_a if p <= alpha else None, p, t, alpha)


def plurality_predict(pool: ModelPool, x) -> int:
    return _point_tally(pool, x).argmax()


def mode_predictions(
    config: PipelineConfig,
    train: Dataset,
    dist: StateDistribution,
    num_samples: int,
    X,
    draw_offset: int = 0,
    *,
    trainer: Trainer = train_model,
    workers: int = 1,
    return_agreement: bool = False,
):
    """Monte-Carlo estimate of the mode predictor at every row of ``X``."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    pool = sample_ensemble(
        config, train, dist, num_samples, draw_offset, trainer=trainer, workers=workers
    )
    votes = model_votes(pool.models, X)
    counts = vote_counts(votes, pool.num_classes)
    labels = np.argmax(counts, axis=0)
    if return_agreement:
        return labels, counts.max(axis=0) / num_samples
    return labels


def estimate_mode_predictor(
    config: PipelineConfig,
    train: Dataset,
    dist: StateDistribution,
    num_samples: int,
    x,
    draw_offset: int = 0,
    *,
    trainer: Trainer = train_model,
    workers: int = 1,
) -> int:
    x = np.asarray(x, dtype=np.float64)
    labels = mode_predictions(
        config, train, dist, num_samples, x[None, :], draw_offset, trainer=trainer, workers=workers
    )
    return int(labels[0])


# ---------------------------------------------------------------------------
# Disagreement
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DisagreementReport:
    p_flip: np.ndarray
    fraction_points_flipping: float
    num_pairs: int
    abstentions_counted_as: str
    decisions: np.ndarray  # (num_predictors, num_points), ABSTAIN for abstentions


def pairwise_flip_rates(decisions: np.ndarray, policy: str = ABS_NEQ) -> tuple[np.ndarray, int]:
    """Per-point fraction of predictor pairs that disagree under ``policy``."""
    if policy not in (ABS_NEQ, STRICT_NEQ):
        raise ValueError(f"unknown disagreement policy {policy!r}")
    k = decisions.shape[0]
    if k < 2:
        raise ValueError("need at least 2 predictors to count disagreement")
    flips = np.zeros(decisions.shape[1])
    pairs = 0
    for i, j in itertools.combinations(range(k), 2):
        a, b = decisions[i], decisions[j]
        d = a != b
        if policy == ABS_NEQ:
            d &= (a != ABSTAIN) & (b != ABSTAIN)
        flips += d
        pairs += 1
    return flips / pairs, pairs


def predictor_decisions(predictor, alpha: float, X) -> np.ndarray:
    """Labels (with :data:`ABSTAIN`) for a selective pool or a plain model."""
    if isinstance(predictor, MlpModel):
        return predictor.predict(np.atleast_2d(X))
    votes = model_votes(predictor.models, X)
    return selective_from_votes(votes, predictor.num_classes, alpha)[0]


def disagreement_report(
    predictors: Sequence[ModelPool | MlpModel],
    alpha: float,
    test: Dataset,
    policy: str = ABS_NEQ,
) -> DisagreementReport:
    """Pairwise disagreement over a test set.

    Pools act as selective ensembles at level ``alpha``; bare models predict
    plainly. ``abs_neq`` ignores abstentions, ``strict_neq`` counts any
    outcome mismatch, including abstain-versus-label.
    """
    if len(predictors) < 2:
        raise ValueError("need at least 2 predictors")
    decisions = np.stack([predictor_decisions(p, alpha, test.features) for p in predictors])
    p_flip, pairs = pairwise_flip_rates(decisions, policy)
    return DisagreementReport(
        p_flip=p_flip,
        fraction_points_flipping=float(np.mean(p_flip > 0)),
        num_pairs=pairs,
        abstentions_counted_as=policy,
        decisions=decisions,
    )
