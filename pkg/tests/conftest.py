import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from consistent_vote.config import RunConfig  # noqa: E402
from consistent_vote.pipeline import (  # noqa: E402
    RANDOM_SEED,
    PipelineConfig,
    StateDistribution,
    preprocess,
)


@pytest.fixture(scope="session")
def desk():
    """Standardized overlapping-Gaussians train/test split with the default pipeline."""
    cfg = RunConfig()
    train, test = cfg.load_data()
    return train, test


@pytest.fixture(scope="session")
def seed_dist():
    return StateDistribution(RANDOM_SEED, 1)


@pytest.fixture(scope="session")
def fast_config():
    return PipelineConfig(hidden_layer_sizes=(8,), epochs=5)


@pytest.fixture(scope="session")
def desk_pool(desk, seed_dist):
    """The 50-model pool on the desk benchmark with default pipeline settings."""
    from consistent_vote.ensemble import create_ensemble, sample_states

    train, _ = desk
    return create_ensemble(PipelineConfig(), train, sample_states(seed_dist, 50))


def constant_model(label: int, num_classes: int = 2, width: int = 2):
    """A linear model that predicts ``label`` everywhere."""
    import numpy as np

    from consistent_vote.pipeline import MlpModel

    bias = np.zeros(num_classes)
    bias[label] = 1.0
    return MlpModel((np.zeros((width, num_classes)),), (bias,), "relu", num_classes)


def pool_of(labels, num_classes: int = 2, width: int = 2):
    from consistent_vote.pipeline import ModelPool, RandomState

    models = [constant_model(c, num_classes, width) for c in labels]
    return ModelPool(models, [RandomState(i) for i in range(len(models))], "test")


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
