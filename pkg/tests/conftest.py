"""
Test configuration for pytest.
"""

from pathlib import Path
from typing import Any

import numpy as np
import pytest

from ecnn.codebook import CodeMatrix
from ecnn.model import EcnnModel
from ecnn.trainer import Dataset, build_model, make_synthetic
from tests.config import AcceptanceTestConfig
from tests.fixtures.test_data import EXAMPLE_ROWS


def pytest_configure(config: Any) -> None:
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "unit: Unit tests that don't require external dependencies")
    config.addinivalue_line("markers", "integration: Integration tests across several modules")
    config.addinivalue_line("markers", "slow: Tests that take a long time to run")
    config.addinivalue_line(
        "markers", "acceptance: Replication runs gated by ECNN_RUN_ACCEPTANCE"
    )


def pytest_collection_modifyitems(config: Any, items: Any) -> None:
    """Skip the replication runs unless they were asked for."""
    if not AcceptanceTestConfig.should_skip():
        return
    skip = pytest.mark.skip(reason=AcceptanceTestConfig.get_skip_reason())
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def example_matrix() -> CodeMatrix:
    """The 3 x 4 example code matrix."""
    return CodeMatrix.from_rows(EXAMPLE_ROWS)


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed-seed generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def four_class_matrix() -> CodeMatrix:
    """A 4 x 6 binary matrix with distinct rows and distinct column partitions."""
    return CodeMatrix.from_rows(
        [
            [0, 0, 0, 1, 0, 0],
            [0, 1, 1, 0, 1, 0],
            [1, 0, 1, 0, 0, 1],
            [1, 1, 0, 0, 0, 0],
        ]
    )


@pytest.fixture
def ternary_matrix() -> CodeMatrix:
    """A 3 x 3 matrix over a 3-symbol alphabet."""
    return CodeMatrix.from_rows([[0, 1, 2], [1, 2, 0], [2, 0, 1]], alphabet=3)


@pytest.fixture
def blobs(four_class_matrix: CodeMatrix) -> Dataset:
    """Small, well separated 4-class dataset in the unit square."""
    return make_synthetic("blobs", four_class_matrix.num_classes, 20, 0.03, seed=5)


@pytest.fixture
def small_model(four_class_matrix: CodeMatrix) -> EcnnModel:
    """Untrained binary ECNN with a shared head."""
    return build_model(2, four_class_matrix, feature_dim=4, front_sizes=(8,), seed=3)


@pytest.fixture
def ternary_model(ternary_matrix: CodeMatrix) -> EcnnModel:
    """Untrained q-ary ECNN with three logits per branch."""
    return build_model(2, ternary_matrix, feature_dim=4, front_sizes=(6,), seed=4)


@pytest.fixture
def output_dir(tmp_path: Path) -> Path:
    """Fresh directory for CLI artifacts."""
    path = tmp_path / "out"
    path.mkdir()
    return path
