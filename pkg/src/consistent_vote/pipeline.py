"""The learning pipeline: data ingestion, preprocessing, and deterministic MLP training.

A trained model is a pure function of ``(config, train, state)``. All training
randomness (weight initialisation and per-epoch shuffling) is drawn from a
Philox-4x64-10 stream keyed by ``state.seed``; see :mod:`consistent_vote.rng`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    EnsembleTrainingError,
    IngestionError,
    PersistenceError,
    TrainingDivergedError,
)
from .rng import Stream, below, mix64

RANDOM_SEED = "random_seed"
LEAVE_ONE_OUT = "leave_one_out"

POOL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Random states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomState:
    """One draw of the pipeline's arbitrary choices."""

    seed: int
    loo_index: int | None = None

    def to_json(self) -> dict:
        return {"seed": self.seed, "loo_index": self.loo_index}

    @classmethod
    def from_json(cls, obj: Mapping) -> RandomState:
        return cls(int(obj["seed"]), None if obj.get("loo_index") is None else int(obj["loo_index"]))


@dataclass(frozen=True)
class StateDistribution:
    kind: str = RANDOM_SEED
    base_seed: int = 0
    train_size: int | None = None

    def __post_init__(self):
        if self.kind not in (RANDOM_SEED, LEAVE_ONE_OUT):
            raise ConfigurationError(f"unknown randomness kind {self.kind!r}")
        if self.kind == LEAVE_ONE_OUT and not self.train_size:
            raise ConfigurationError("leave_one_out randomness requires a positive train_size")


def sample_state(dist: StateDistribution, i: int) -> RandomState:
    if i < 0:
        raise ValueError(f"draw index must be non-negative, got {i}")
    word = mix64(dist.base_seed, i)
    if dist.kind == RANDOM_SEED:
        return RandomState(seed=word)
    if not dist.train_size:
        raise ConfigurationError("leave_one_out randomness requires a positive train_size")
    return RandomState(seed=dist.base_seed, loo_index=below(word, dist.train_size))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    num_classes: int
    # feature columns that came from numeric source columns (the ones preprocess touches)
    numeric_columns: tuple[int, ...] = ()
    # raw string values of categorical source columns, for group-by reports
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    label_names: list[str] | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return replace(
            self,
            features=self.features[rows],
            labels=self.labels[rows],
            groups={k: v[rows] for k, v in self.groups.items()},
        )

    def without_row(self, index: int) -> Dataset:
        if not 0 <= index < len(self):
            raise ValueError(f"loo_index {index} outside training set of size {len(self)}")
        return self.subset(np.delete(np.arange(len(self)), index))


def _column_spec(spec) -> tuple[str, list[str] | None]:
    if isinstance(spec, str):
        return spec, None
    return spec["type"], spec.get("categories")


def _sorted_values(values: Sequence[str]) -> list[str]:
    uniq = set(values)
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def load_dataset(path, schema: Mapping[str, object]) -> Dataset:
    """Read a CSV with a header row.

    ``schema`` maps every column name to ``"numeric"``, ``"categorical"``,
    ``"label"`` or ``"ignore"``; a categorical entry may instead be
    ``{"type": "categorical", "categories": [...]}`` to fix the category set,
    in which case unseen categories are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"dataset file not found: {path}")
    kinds = {name: _column_spec(s) for name, s in schema.items()}
    for name, (kind, _) in kinds.items():
        if kind not in ("numeric", "categorical", "label", "ignore"):
            raise IngestionError(f"column {name!r}: unknown type {kind!r}")
    label_cols = [n for n, (k, _) in kinds.items() if k == "label"]
    if len(label_cols) != 1:
        raise IngestionError(f"schema must declare exactly one label column, got {label_cols}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: no data rows (the file is empty)") from None
        rows = [r for r in reader if r]
    for name in header:
        if name not in kinds:
            raise IngestionError(f"column {name!r} is not declared in the schema")
    for name in kinds:
        if name not in header:
            raise IngestionError(f"schema column {name!r} is missing from {path}")
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise IngestionError(
                f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}"
            )

    columns = {name: [r[j] for r in rows] for j, name in enumerate(header)}
    blocks, names, numeric, groups = [], [], [], {}
    for name in header:
        kind, declared = kinds[name]
        values = columns[name]
        if kind == "numeric":
            col = np.empty(len(values))
            for i, v in enumerate(values):
                try:
                    col[i] = float(v)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {i + 2}, column {name!r}: non-numeric value {v!r}"
                    ) from None
                if not math.isfinite(col[i]):
                    raise IngestionError(
                        f"{path}: row {i + 2}, column {name!r}: non-finite value {v!r}"
                    )
            numeric.append(sum(b.shape[1] for b in blocks))
            blocks.append(col[:, None])
            names.append(name)
        elif kind == "categorical":
            cats = list(declared) if declared is not None else _sorted_values(values)
            index = {c: j for j, c in enumerate(cats)}
            onehot = np.zeros((len(values), len(cats)))
            for i, v in enumerate(values):
                if v not in index:
                    raise IngestionError(
                        f"{path}: row {i + 2}, column {name!r}: unknown category {v!r}"
                    )
                onehot[i, index[v]] = 1.0
            blocks.append(onehot)
            names.extend(f"{name}={c}" for c in cats)
            groups[name] = np.array(values, dtype=object)

    label_values = columns[label_cols[0]]
    label_names = _sorted_values(label_values)
    if len(label_names) < 2:
        raise IngestionError(f"label column {label_cols[0]!r} has fewer than 2 classes")
    label_index = {c: j for j, c in enumerate(label_names)}
    labels = np.array([label_index[v] for v in label_values], dtype=np.int64)
    features = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return Dataset(
        features=features,
        labels=labels,
        feature_names=names,
        num_classes=len(label_names),
        numeric_columns=tuple(numeric),
        groups=groups,
        label_names=label_names,
    )


def _row_mask(fit_on, n: int) -> np.ndarray:
    if fit_on is None:
        return np.ones(n, dtype=bool)
    fit_on = np.asarray(fit_on)
    if fit_on.dtype == bool:
        return fit_on
    mask = np.zeros(n, dtype=bool)
    mask[fit_on] = True
    return mask


def preprocess(dataset: Dataset, method: str, fit_on=None) -> Dataset:
    """Scale the numeric columns using statistics fitted on the ``fit_on`` rows.

    ``fit_on`` is a boolean mask or an index array (default: all rows).
    ``standardize`` uses the sample standard deviation (ddof=1); ``minmax`` maps
    the fitted range onto [0, 1]. Columns that are constant on the fitted rows
    map to 0.
    """
    if method not in ("standardize", "minmax", "none"):
        raise ConfigurationError(f"unknown preprocessing {method!r}")
    mask = _row_mask(fit_on, len(dataset))
    if not mask.any():
        raise ValueError("fit_on selects no rows")
    if method == "none" or not dataset.numeric_columns:
        return dataset
    X = dataset.features.copy()
    cols = list(dataset.numeric_columns)
    fit = X[mask][:, cols]
    if method == "standardize":
        center = fit.mean(axis=0)
        scale = fit.std(axis=0, ddof=1) if len(fit) > 1 else np.zeros(len(cols))
    else:
        center = fit.min(axis=0)
        scale = fit.max(axis=0) - center
    # decided on the raw values: a constant column can have a tiny nonzero std from rounding
    degenerate = (np.ptp(fit, axis=0) == 0) | ~(scale > 0)
    safe = np.where(degenerate, 1.0, scale)
    out = (X[:, cols] - center) / safe
    out[:, degenerate] = 0.0
    X[:, cols] = out
    return replace(dataset, features=X)


def overlapping_gaussians(
    train_size: int = 500,
    test_size: int = 200,
    num_features: int = 2,
    separation: float = 1.0,
    seed: int = 20211206,
) -> tuple[Dataset, Dataset]:
    """The desk benchmark: two isotropic unit Gaussians whose means differ by
    ``separation`` along the all-ones direction. Classes are balanced."""
    stream = Stream(seed)
    n = train_size + test_size
    labels = np.arange(n) % 2
    labels = labels[stream.permutation(n)]
    direction = np.ones(num_features) / math.sqrt(num_features)
    noise = stream.normal(n * num_features).reshape(n, num_features)
    features = noise + np.outer(labels - 0.5, direction) * separation
    data = Dataset(
        features=features,
        labels=labels.astype(np.int64),
        feature_names=[f"x{j}" for j in range(num_features)],
        num_classes=2,
        numeric_columns=tuple(range(num_features)),
    )
    return data.subset(np.arange(train_size)), data.subset(np.arange(train_size, n))


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    perm = Stream(seed).permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# Models and training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    hidden_layer_sizes: tuple[int, ...] = (16,)
    activation: str = "relu"
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_layer_sizes", tuple(int(h) for h in self.hidden_layer_sizes))
        if any(h <= 0 for h in self.hidden_layer_sizes):
            raise ConfigurationError(f"hidden layer sizes must be positive: {self.hidden_layer_sizes}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        for name in ("epochs", "batch_size", "learning_rate", "adam_epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigurationError("adam betas must lie in (0, 1)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden_layer_sizes"] = list(self.hidden_layer_sizes)
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> PipelineConfig:
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        unknown = set(obj) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown pipeline settings: {sorted(unknown)}")
        return cls(**known)

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Fully-connected network; ``weights[l]`` has shape (fan_in, fan_out)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str
    num_classes: int

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {l}: weight {w.shape} does not match bias {b.shape}")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l}: input width does not chain from layer {l - 1}")
        if self.weights[-1].shape[1] != self.num_classes:
            raise ValueError("output layer width must equal num_classes")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_width] + [w.shape[1] for w in self.weights]

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_width:
            raise ValueError(f"input width {X.shape[-1]} does not match model width {self.input_width}")
        return X

    def logits(self, X) -> np.ndarray:
        h = self._check_input(X)
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = activate(h, self.activation)
        return h

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum: lowest class index on ties
        return np.argmax(self.logits(X), axis=-1)

    def same_parameters(self, other: MlpModel) -> bool:
        return (
            self.activation == other.activation
            and self.num_classes == other.num_classes
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)  # subgradient 0 at the kink
    return 1.0 - a * a


def predict_label(model: MlpModel, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_label expects a single feature vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return int(model.predict(x))


def initial_model(config: PipelineConfig, input_width: int, num_classes: int, stream: Stream) -> MlpModel:
    """Glorot-uniform weights drawn layer by layer in row-major order, zero biases."""
    dims = [input_width, *config.hidden_layer_sizes, num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(stream.uniform_range(-limit, limit, fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), config.activation, num_classes)


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    rows = np.arange(len(y))
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, y]))
    grad = exp / total
    grad[rows, y] -= 1.0
    return loss, grad / len(y)


def mean_loss(model: MlpModel, data: Dataset) -> float:
    return _softmax_xent(model.logits(data.features), data.labels)[0]


def train_model(config: PipelineConfig, train: Dataset, state: RandomState) -> MlpModel:
    """Train one network; the result is a pure function of the arguments."""
    if state.loo_index is not None:
        train = train.without_row(state.loo_index)
    if len(train) == 0:
        raise ValueError("training set is empty")
    X, y = train.features, train.labels
    stream = Stream(state.seed)
    model = initial_model(config, train.width, train.num_classes, stream)
    W = [w.copy() for w in model.weights]
    B = [b.copy() for b in model.biases]
    params = W + B
    adam = config.optimizer == "adam"
    if adam:
        m1 = [np.zeros_like(p) for p in params]
        m2 = [np.zeros_like(p) for p in params]
        b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    lr = config.learning_rate
    act = config.activation
    last = len(W) - 1
    step = 0
    n = len(y)
    for epoch in range(config.epochs):
        order = stream.permutation(n)
        for batch, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            h = X[idx]
            inputs, pre, post = [], [], []
            for l in range(len(W)):
                inputs.append(h)
                z = h @ W[l] + B[l]
                if l < last:
                    h = activate(z, act)
                    pre.append(z)
                    post.append(h)
                else:
                    h = z
            loss, delta = _softmax_xent(h, y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, batch, loss)
            gW, gB = [None] * len(W), [None] * len(W)
            for l in range(last, -1, -1):
                gW[l] = inputs[l].T @ delta
                gB[l] = delta.sum(axis=0)
                if l:
                    delta = (delta @ W[l].T) * activation_grad(pre[l - 1], post[l - 1], act)
            grads = gW + gB
            step += 1
            if adam:
                c1 = 1.0 - b1**step
                c2 = 1.0 - b2**step
                for p, g, a, v in zip(params, grads, m1, m2):
                    a *= b1
                    a += (1.0 - b1) * g
                    v *= b2
                    v += (1.0 - b2) * g * g
                    p -= lr * (a / c1) / (np.sqrt(v / c2) + eps)
            else:
                for p, g in zip(params, grads):
                    p -= lr * g
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingDivergedError(config.epochs - 1, -1, float("nan"))
    return MlpModel(tuple(W), tuple(B), act, train.num_classes)


Trainer = Callable[[PipelineConfig, Dataset, RandomState], MlpModel]


def _train_indexed(args):
    trainer, config, train, i, state = args
    try:
        return trainer(config, train, state)
    except Exception as exc:  # annotate with the failing state, keep the cause
        raise EnsembleTrainingError(i, exc) from exc


def train_many(
    config: PipelineConfig,
    train: Dataset,
    states: Sequence[RandomState],
    trainer: Trainer = train_model,
    workers: int = 1,
) -> list[MlpModel]:
    """Train one model per state, optionally across worker processes.

    Each model depends only on its own state, so the result is independent of
    ``workers``.
    """
    jobs = [(trainer, config, train, i, s) for i, s in enumerate(states)]
    if workers <= 1 or len(jobs) <= 1:
        return [_train_indexed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_indexed, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def default_workers() -> int:
    env = os.environ.get("CONSISTENT_VOTE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"CONSISTENT_VOTE_THREADS must be an integer, got {env!r}") from None
    return 1


# ---------------------------------------------------------------------------
# Model pools
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelPool:
    models: tuple[MlpModel, ...]
    states: tuple[RandomState, ...]
    config_fingerprint: str
    config: PipelineConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "states", tuple(self.states))
        if not self.models:
            raise ValueError("a model pool needs at least one model")
        if len(self.models) != len(self.states):
            raise ValueError(f"{len(self.models)} models but {len(self.states)} states")
        dims, act, k = self.models[0].layer_dims, self.models[0].activation, self.models[0].num_classes
        for m in self.models[1:]:
            if m.layer_dims != dims or m.activation != act or m.num_classes != k:
                raise ValueError("all models in a pool must share architecture and num_classes")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def num_classes(self) -> int:
        return self.models[0].num_classes

    def select(self, indices) -> ModelPool:
        indices = [int(i) for i in indices]
        return replace(
            self,
            models=tuple(self.models[i] for i in indices),
            states=tuple(self.states[i] for i in indices),
        )


def _hex_array(a: np.ndarray) -> list[str]:
    return [float(v).hex() for v in a.ravel()]


def _from_hex(values: Sequence[str], shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


def _model_to_json(model: MlpModel) -> dict:
    return {
        "activation": model.activation,
        "num_classes": model.num_classes,
        "layer_dims": model.layer_dims,
        "weights": [_hex_array(w) for w in model.weights],
        "biases": [_hex_array(b) for b in model.biases],
    }


def _model_from_json(obj: Mapping) -> MlpModel:
    dims = obj["layer_dims"]
    weights = tuple(_from_hex(w, (i, o)) for w, i, o in zip(obj["weights"], dims[:-1], dims[1:]))
    biases = tuple(_from_hex(b, (o,)) for b, o in zip(obj["biases"], dims[1:]))
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise ValueError("layer count does not match layer_dims")
    return MlpModel(weights, biases, obj["activation"], int(obj["num_classes"]))


def _payload_digest(states: list, models: list) -> str:
    canon = json.dumps({"states": states, "models": models}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def pool_to_json(pool: ModelPool) -> dict:
    states = [s.to_json() for s in pool.states]
    models = [_model_to_json(m) for m in pool.models]
    return {
        "format_version": POOL_FORMAT_VERSION,
        "config_fingerprint": pool.config_fingerprint,
        "config": pool.config.to_json() if pool.config is not None else None,
        "payload_sha256": _payload_digest(states, models),
        "states": states,
        "models": models,
    }


def save_pool(pool: ModelPool, path) -> None:
    text = json.dumps(pool_to_json(pool), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_pool(path, expected_fingerprint: str | None = None) -> ModelPool:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PersistenceError(f"pool file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise PersistenceError(f"{path}: not a valid pool document ({exc})") from None
    if not isinstance(obj, dict):
        raise PersistenceError(f"{path}: not a valid pool document")
    version = obj.get("format_version")
    if version != POOL_FORMAT_VERSION:
        raise PersistenceError(f"{path}: unsupported format_version {version!r}")
    try:
        states_json, models_json = obj["states"], obj["models"]
        if obj["payload_sha256"] != _payload_digest(states_json, models_json):
            raise PersistenceError(f"{path}: payload checksum mismatch (file corrupted)")
        fingerprint = obj["config_fingerprint"]
        config = None
        if obj.get("config") is not None:
            config = PipelineConfig.from_json(obj["config"])
            if config.fingerprint() != fingerprint:
                raise PersistenceError(f"{path}: stored config does not match its fingerprint")
        pool = ModelPool(
            models=tuple(_model_from_json(m) for m in models_json),
            states=tuple(RandomState.from_json(s) for s in states_json),
            config_fingerprint=fingerprint,
            config=config,
        )
    except PersistenceError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"{path}: malformed pool document ({exc})") from None
    if expected_fingerprint is not None and expected_fingerprint != fingerprint:
        raise PersistenceError(
            f"{path}: pool was trained with config {fingerprint[:12]}, expected {expected_fingerprint[:12]}"
        )
    return pool
