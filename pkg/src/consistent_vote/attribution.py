"""Saliency-map attributions and the similarity metrics used to compare them."""

from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .ensemble import model_votes, plurality_from_votes
from .errors import UndefinedCorrelationError
from .pipeline import Dataset, MlpModel, ModelPool, activate, activation_grad
from .rng import Stream

METRICS = ("spearman_rho", "pearson_r", "top_k_intersection", "l2_distance", "ssim")


@dataclass(frozen=True, eq=False)
class AttributionVector:
    scores: np.ndarray
    target_class: int
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 1:
            raise ValueError("attribution scores must be a 1-D vector")
        if not np.all(np.isfinite(scores)):
            raise ValueError("attribution scores must be finite")
        if self.shape is not None and self.shape[0] * self.shape[1] != scores.size:
            raise ValueError(f"shape {self.shape} does not hold {scores.size} scores")

    def image(self) -> np.ndarray:
        if self.shape is None:
            raise ValueError("attribution has no 2-D shape")
        return self.scores.reshape(self.shape)


def input_gradients(model: MlpModel, X, targets) -> np.ndarray:
    """Gradient of each row's target-class logit with respect to that row.

    ReLU uses the subgradient 0 at 0. Returns shape (num_points, width).
    """
    X = model._check_input(np.atleast_2d(X))
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (len(X),))
    if np.any((targets < 0) | (targets >= model.num_classes)):
        raise ValueError(f"target class outside [0, {model.num_classes})")
    last = len(model.weights) - 1
    h = X
    pre, post = [], []
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if l < last:
            h = activate(z, model.activation)
            pre.append(z)
            post.append(h)
    delta = np.zeros((len(X), model.num_classes))
    delta[np.arange(len(X)), targets] = 1.0
    for l in range(last, -1, -1):
        delta = delta @ model.weights[l].T
        if l:
            delta = delta * activation_grad(pre[l - 1], post[l - 1], model.activation)
    return delta


def saliency(model: MlpModel, x, target: int, shape=None) -> AttributionVector:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("saliency expects a single feature vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return AttributionVector(input_gradients(model, x, target)[0], int(target), shape)


def ensemble_attributions(pool: ModelPool, X) -> tuple[np.ndarray, np.ndarray]:
    """Mean constituent saliency toward the pool's plurality label, for every row of ``X``.

    Returns ``(attributions, targets)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = plurality_from_votes(model_votes(pool.models, X), pool.num_classes)
    total = np.zeros_like(X)
    for m in pool.models:
        total += input_gradients(m, X, targets)
    return total / len(pool.models), targets


def ensemble_saliency(pool: ModelPool, x, shape=None) -> AttributionVector:
    x = np.asarray(x, dtype=np.float64)
    attr, targets = ensemble_attributions(pool, x[None, :])
    return AttributionVector(attr[0], int(targets[0]), shape)


# ---------------------------------------------------------------------------
# Metrics. Row-wise versions return NaN where a correlation is undefined;
# the public single-pair functions raise instead.
# ---------------------------------------------------------------------------


def _scores(a) -> np.ndarray:
    return a.scores if isinstance(a, AttributionVector) else np.asarray(a, dtype=np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _scores(a), _scores(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"attributions must be equal-length vectors, got {a.shape} and {b.shape}")
    return a, b


def pearson_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = A - A.mean(axis=-1, keepdims=True)
    B = B - B.mean(axis=-1, keepdims=True)
    den = np.sqrt((A * A).sum(axis=-1) * (B * B).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (A * B).sum(axis=-1) / den
    r = np.where(den > 0, r, np.nan)
    return np.clip(r, -1.0, 1.0)


def spearman_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return pearson_rows(rankdata(A, axis=-1), rankdata(B, axis=-1))


def top_k_rows(A: np.ndarray, B: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= A.shape[-1]:
        raise ValueError(f"k must lie in [1, {A.shape[-1]}], got {k}")
    # stable sort on negated scores: highest first, lowest feature index on ties
    top_a = np.argsort(-A, axis=-1, kind="stable")[..., :k]
    top_b = np.argsort(-B, axis=-1, kind="stable")[..., :k]
    in_a = np.zeros(A.shape, dtype=bool)
    in_b = np.zeros(B.shape, dtype=bool)
    np.put_along_axis(in_a, top_a, True, axis=-1)
    np.put_along_axis(in_b, top_b, True, axis=-1)
    return (in_a & in_b).sum(axis=-1) / k


def l2_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.linalg.norm(A - B, axis=-1)


def _check_defined(r: float) -> float:
    if np.isnan(r):
        raise UndefinedCorrelationError("correlation is undefined for a constant attribution vector")
    return float(r)


def spearman_rho(a, b) -> float:
    """Pearson correlation of average ranks."""
    a, b = _pair(a, b)
    if a.size < 2:
        raise ValueError("need at least 2 features")
    return _check_defined(spearman_rows(a[None], b[None])[0])


def pearson_r(a, b) -> float:
    a, b = _pair(a, b)
    if a.size < 2:
        raise ValueError("need at least 2 features")
    return _check_defined(pearson_rows(a[None], b[None])[0])


def top_k_intersection(a, b, k: int = 5) -> float:
    a, b = _pair(a, b)
    return float(top_k_rows(a[None], b[None], k)[0])


def l2_distance(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.linalg.norm(a - b))


SSIM_WINDOW = 7
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _image(a) -> np.ndarray:
    if isinstance(a, AttributionVector):
        return a.image()
    return np.asarray(a, dtype=np.float64)


def ssim(a, b) -> float:
    """Mean structural similarity over all 7x7 windows.

    Uses uniform windows, sample (co)variances, ``C1 = (0.01 L)^2`` and
    ``C2 = (0.03 L)^2`` with ``L`` the joint value range of both images
    (1 if both are constant).
    """
    x, y = _image(a), _image(b)
    if x.ndim != 2 or x.shape != y.shape:
        raise ValueError(f"ssim needs two images of the same 2-D shape, got {x.shape} and {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images at least {SSIM_WINDOW} pixels on each side, got {x.shape}")
    L = max(x.max(), y.max()) - min(x.min(), y.min())
    if L == 0:
        L = 1.0
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    norm = SSIM_WINDOW * SSIM_WINDOW - 1
    vx = (dx * dx).sum(axis=(-2, -1)) / norm
    vy = (dy * dy).sum(axis=(-2, -1)) / norm
    cxy = (dx * dy).sum(axis=(-2, -1)) / norm
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityRecord:
    spearman_rho: float
    pearson_r: float
    top_k_intersection: float
    l2_distance: float
    k: int
    ssim: float | None = None


def similarity(a, b, k: int = 5, shape=None) -> SimilarityRecord:
    s = None
    if shape is not None:
        s = ssim(_scores(a).reshape(shape), _scores(b).reshape(shape))
    return SimilarityRecord(
        spearman_rho=spearman_rho(a, b),
        pearson_r=pearson_r(a, b),
        top_k_intersection=top_k_intersection(a, b, k),
        l2_distance=l2_distance(a, b),
        k=k,
        ssim=s,
    )


def _metric_rows(A, B, k, shape) -> dict[str, np.ndarray]:
    out = {
        "spearman_rho": spearman_rows(A, B),
        "pearson_r": pearson_rows(A, B),
        "top_k_intersection": top_k_rows(A, B, k),
        "l2_distance": l2_rows(A, B),
    }
    if shape is not None:
        out["ssim"] = np.array([ssim(a.reshape(shape), b.reshape(shape)) for a, b in zip(A, B)])
    return out


@dataclass(frozen=True)
class StabilityRow:
    n: int
    metric: str
    mean: float
    std: float
    baseline_mean: float
    count: int  # defined (point, pair) values behind mean/std
    undefined: int  # pairs skipped because a correlation was undefined


def attribution_stability_report(
    pools_by_size: Mapping[int, Sequence[ModelPool]],
    test: Dataset,
    k: int = 5,
    *,
    baseline_points: int = 24,
    seed: int = 0,
    shape: tuple[int, int] | None = None,
) -> list[StabilityRow]:
    """Similarity of ensemble attributions on the same point across independently drawn ensembles.

    For each ensemble size, every pair of pools is compared on every test
    point; mean and standard deviation run over all (point, pair) values.
    The baseline compares attributions of ``baseline_points`` randomly chosen
    distinct points within the same pool.
    """
    X = test.features
    rows = []
    for n in sorted(pools_by_size):
        pools = pools_by_size[n]
        if len(pools) < 2:
            raise ValueError(f"size {n}: need at least 2 pools to compare")
        attrs = [ensemble_attributions(p, X)[0] for p in pools]
        values: dict[str, list[np.ndarray]] = {}
        for i, j in itertools.combinations(range(len(attrs)), 2):
            for name, v in _metric_rows(attrs[i], attrs[j], k, shape).items():
                values.setdefault(name, []).append(v)
        base: dict[str, list[np.ndarray]] = {}
        m = min(baseline_points, len(X))
        stream = Stream(seed)
        for A in attrs:
            pts = np.sort(stream.sample_without_replacement(len(X), m))
            left, right = zip(*itertools.combinations(pts, 2)) if m >= 2 else ((), ())
            if not left:
                continue
            for name, v in _metric_rows(A[list(left)], A[list(right)], k, shape).items():
                base.setdefault(name, []).append(v)
        for name in values:
            v = np.concatenate(values[name])
            ok = ~np.isnan(v)
            b = np.concatenate(base[name]) if name in base else np.array([np.nan])
            rows.append(
                StabilityRow(
                    n=int(n),
                    metric=name,
                    mean=float(v[ok].mean()) if ok.any() else float("nan"),
                    std=float(v[ok].std()) if ok.any() else float("nan"),
                    baseline_mean=float(np.nanmean(b)) if np.any(~np.isnan(b)) else float("nan"),
                    count=int(ok.sum()),
                    undefined=int((~ok).sum()),
                )
            )
    return rows
