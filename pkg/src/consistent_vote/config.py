"""Run configuration: one JSON document describing data, pipeline, randomness and experiment sizes.

Example (every key optional except where noted)::

    {
      "format_version": 1,
      "dataset": {"synthetic": {"train_size": 500, "test_size": 200, "num_features": 2,
                                "separation": 1.0, "seed": 20211206}},
      "preprocessing": "standardize",
      "pipeline": {"hidden_layer_sizes": [16], "activation": "relu", "epochs": 50,
                   "batch_size": 32, "learning_rate": 0.1, "optimizer": "sgd"},
      "randomness": {"kind": "random_seed", "base_seed": 1},
      "pool_size": 50,
      "ensemble_sizes": [5, 10, 15, 20],
      "num_resamples": 10,
      "alphas": [0.05, 0.01],
      "resample_seed": 7,
      "top_k": 5,
      "group_by": null,
      "group_margin": 0.05,
      "bounds": {"mode_n": 10, "pair_n": 15, "alpha": 0.05, "trials": 100,
                 "pair_trials": 50, "oracle_samples": 200},
      "attribution": {"sizes": [1, 5, 10, 15, 20], "num_ensembles": 10, "baseline_points": 24}
    }

A CSV dataset replaces ``synthetic`` with::

    {"path": "data.csv",
     "schema": {"age": "numeric", "job": "categorical", "y": "label"},
     "split": {"test_fraction": 0.2, "seed": 3}}

or ``"split": {"train_indices": [...], "test_indices": [...]}``. Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .pipeline import (
    LEAVE_ONE_OUT,
    RANDOM_SEED,
    Dataset,
    PipelineConfig,
    StateDistribution,
    load_dataset,
    overlapping_gaussians,
    preprocess,
    train_test_split,
)

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoundsSettings:
    mode_n: int = 10
    pair_n: int = 15
    alpha: float = 0.05
    trials: int = 100
    pair_trials: int = 50
    oracle_samples: int = 200


@dataclass(frozen=True)
class AttributionSettings:
    sizes: tuple[int, ...] = (1, 5, 10, 15, 20)
    num_ensembles: int = 10
    baseline_points: int = 24


@dataclass(frozen=True)
class RunConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    preprocessing: str = "standardize"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    randomness_kind: str = RANDOM_SEED
    base_seed: int = 1
    pool_size: int = 50
    ensemble_sizes: tuple[int, ...] = (5, 10, 15, 20)
    num_resamples: int = 10
    alphas: tuple[float, ...] = (0.05, 0.01)
    resample_seed: int = 7
    top_k: int = 5
    group_by: str | None = None
    group_margin: float = 0.05
    output_dir: str | None = None
    bounds: BoundsSettings = field(default_factory=BoundsSettings)
    attribution: AttributionSettings = field(default_factory=AttributionSettings)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if self.preprocessing not in ("standardize", "minmax", "none"):
            raise ConfigurationError(f"unknown preprocessing {self.preprocessing!r}")
        if self.randomness_kind not in (RANDOM_SEED, LEAVE_ONE_OUT):
            raise ConfigurationError(f"unknown randomness kind {self.randomness_kind!r}")
        for a in (*self.alphas, self.bounds.alpha):
            if not 0 < a < 1:
                raise ConfigurationError(f"alpha values must lie in (0, 1), got {a}")
        if self.pool_size < 1:
            raise ConfigurationError("pool_size must be >= 1")
        if any(n < 1 for n in self.ensemble_sizes) or any(n < 1 for n in self.attribution.sizes):
            raise ConfigurationError("ensemble sizes must be >= 1")
        if self.num_resamples < 2:
            raise ConfigurationError("num_resamples must be >= 2 so that disagreement is defined")
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        src = self.dataset
        if ("synthetic" in src) == ("path" in src):
            raise ConfigurationError("dataset must specify exactly one of 'synthetic' or 'path'")
        if "path" in src:
            schema = src.get("schema")
            if not isinstance(schema, Mapping) or not schema:
                raise ConfigurationError("a CSV dataset needs a non-empty 'schema'")
            if self.group_by is not None:
                kind = schema.get(self.group_by)
                kind = kind.get("type") if isinstance(kind, Mapping) else kind
                if kind != "categorical":
                    raise ConfigurationError(
                        f"group_by column {self.group_by!r} must be declared categorical in the schema"
                    )
        elif self.group_by is not None:
            raise ConfigurationError("group_by needs a CSV dataset with a categorical column")

    def distribution(self, train_size: int) -> StateDistribution:
        return StateDistribution(
            self.randomness_kind,
            self.base_seed,
            train_size if self.randomness_kind == LEAVE_ONE_OUT else None,
        )

    def load_data(self) -> tuple[Dataset, Dataset]:
        """Build the preprocessed train and test splits (scaling fitted on train rows only)."""
        src = self.dataset
        if "synthetic" in src:
            params = dict(src["synthetic"])
            try:
                train, test = overlapping_gaussians(**params)
            except TypeError as exc:
                raise ConfigurationError(f"bad synthetic dataset settings: {exc}") from None
            full = Dataset(
                features=np.vstack([train.features, test.features]),
                labels=np.concatenate([train.labels, test.labels]),
                feature_names=train.feature_names,
                num_classes=train.num_classes,
                numeric_columns=train.numeric_columns,
            )
            train_idx = np.arange(len(train))
            test_idx = np.arange(len(train), len(full))
        else:
            path = Path(src["path"])
            if not path.is_absolute():
                path = self.base_dir / path
            full = load_dataset(path, src["schema"])
            split = src.get("split", {"test_fraction": 0.2, "seed": 0})
            if "train_indices" in split:
                train_idx = np.asarray(split["train_indices"], dtype=np.int64)
                test_idx = np.asarray(split["test_indices"], dtype=np.int64)
                for idx in (train_idx, test_idx):
                    if len(idx) == 0 or idx.min() < 0 or idx.max() >= len(full):
                        raise ConfigurationError("split indices must be non-empty and within the dataset")
            else:
                train_idx, test_idx = train_test_split(full, float(split["test_fraction"]), int(split["seed"]))
        full = preprocess(full, self.preprocessing, fit_on=train_idx)
        return full.subset(train_idx), full.subset(test_idx)

    def fingerprint(self) -> str:
        return self.pipeline.fingerprint()


def _tuple(v, cast):
    return tuple(cast(x) for x in v)


def run_config_from_json(obj: Mapping, base_dir: Path = Path(".")) -> RunConfig:
    obj = dict(obj)
    version = obj.pop("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported config format_version {version!r}")
    kwargs: dict = {"base_dir": base_dir}
    try:
        if "dataset" in obj:
            kwargs["dataset"] = dict(obj.pop("dataset"))
        if "pipeline" in obj:
            kwargs["pipeline"] = PipelineConfig.from_json(obj.pop("pipeline"))
        if "randomness" in obj:
            r = dict(obj.pop("randomness"))
            kwargs["randomness_kind"] = r.pop("kind", RANDOM_SEED)
            kwargs["base_seed"] = int(r.pop("base_seed", 1))
            if r:
                raise ConfigurationError(f"unknown randomness settings: {sorted(r)}")
        if "bounds" in obj:
            kwargs["bounds"] = BoundsSettings(**obj.pop("bounds"))
        if "attribution" in obj:
            a = dict(obj.pop("attribution"))
            if "sizes" in a:
                a["sizes"] = _tuple(a["sizes"], int)
            kwargs["attribution"] = AttributionSettings(**a)
        for key, cast in (("ensemble_sizes", int), ("alphas", float)):
            if key in obj:
                kwargs[key] = _tuple(obj.pop(key), cast)
        for key in ("preprocessing", "pool_size", "num_resamples", "resample_seed", "top_k",
                    "group_by", "group_margin", "output_dir"):
            if key in obj:
                kwargs[key] = obj.pop(key)
    except TypeError as exc:
        raise ConfigurationError(f"bad configuration: {exc}") from None
    if obj:
        raise ConfigurationError(f"unknown configuration keys: {sorted(obj)}")
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_json(obj, base_dir=path.parent)
