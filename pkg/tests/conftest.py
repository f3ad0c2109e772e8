"""
Pytest configuration and fixtures for the risk pipeline tests
"""

import os
import shutil
import sys
import tempfile

import numpy as np
import pytest

# Logs go to a throwaway directory; set before config.settings is imported.
_LOGS_DIR = tempfile.mkdtemp(prefix="risk_test_logs_")
os.environ.setdefault("RISK_LOGS_DIR", _LOGS_DIR)
os.environ.pop("RISK_OUTPUT_DIR", None)

# Ensure we can import from the parent directory
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import Dataset, FeatureDescriptor, FeatureKind, dataset_from_matrix  # noqa: E402
from src.logger import PipelineLogger  # noqa: E402


@pytest.fixture(scope="session", autouse=True)
def cleanup_logs_dir():
    yield
    shutil.rmtree(_LOGS_DIR, ignore_errors=True)


@pytest.fixture
def logger(tmp_path_factory):
    """Logger writing into its own per-test temporary directory."""
    return PipelineLogger("DEBUG", logs_dir=str(tmp_path_factory.mktemp("logs")))


@pytest.fixture
def separable_data():
    """Two informative features, one noise feature, ~30% positives."""
    rng = np.random.default_rng(7)
    n = 240
    y = (rng.random(n) < 0.3).astype(np.int8)
    X = np.column_stack([
        rng.normal(0.0, 1.0, n) + 1.5 * y,
        rng.normal(0.0, 1.0, n) - 1.0 * y,
        rng.normal(0.0, 1.0, n),
    ])
    return X, y


@pytest.fixture
def separable_dataset(separable_data):
    X, y = separable_data
    return dataset_from_matrix(X, labels=y, names=["a", "b", "noise"])


@pytest.fixture
def mixed_dataset():
    """Small cohort with a categorical column and missing cells."""
    values = np.array([
        [1.0, 10.0, 0.0],
        [2.0, 0.0, 1.0],
        [3.0, 30.0, 1.0],
        [0.0, 40.0, 0.0],
        [5.0, 50.0, 1.0],
    ])
    mask = np.array([
        [False, False, False],
        [False, True, False],
        [False, False, True],
        [True, False, False],
        [False, False, False],
    ])
    schema = (
        FeatureDescriptor("age", unit="years"),
        FeatureDescriptor("lactate", unit="mmol/L"),
        FeatureDescriptor("sex", kind=FeatureKind.CATEGORICAL, levels=("F", "M")),
    )
    return Dataset(schema=schema, values=values, missing_mask=mask, labels=np.array([0, 1, 0, 1, 0]),
                   row_ids=("r1", "r2", "r3", "r4", "r5"))


@pytest.fixture
def temp_test_dir():
    """Create a temporary directory for test files."""
    temp_dir = tempfile.mkdtemp(prefix="risk_test_")
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers automatically."""
    for item in items:
        if "test_integration" in item.nodeid:
            item.add_marker(pytest.mark.integration)
        if "rollback" in item.nodeid.lower():
            item.add_marker(pytest.mark.rollback)
