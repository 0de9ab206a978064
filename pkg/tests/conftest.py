import numpy as np
import pytest

from spclustreg.data import SpatialDataset, knn_weights
from spclustreg.simulate import gen_covariates, gen_locations, gen_response, scenario1_truth

# filled by test_acceptance; printed after the run
ACCEPTANCE_LINES: list = []


def pytest_configure(config):
    config.addinivalue_line("markers", "example: one worked example from the method's contract")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def scenario1_dataset(seed, n=300, eta=0.2):
    rng = np.random.default_rng(seed)
    locs = gen_locations(n, rng)
    X = gen_covariates(locs, eta, 0.75, rng)
    truth = scenario1_truth(locs)
    y = gen_response(truth, X, rng)
    return SpatialDataset.from_arrays(locs, X, y), truth


def two_regime_dataset(seed, n=120, separation=10.0, sigma=0.5):
    """Left/right halves of the unit square with very different lines."""
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, 1, (n, 2))
    x = rng.standard_normal(n)
    block = (locs[:, 0] > 0.5).astype(int)
    offset = separation * sigma * np.where(block == 1, 1.0, -1.0)
    y = offset + np.where(block == 1, 2.0, -1.0) * x + sigma * rng.standard_normal(n)
    return SpatialDataset.from_arrays(locs, x, y), block


@pytest.fixture
def s1_small():
    ds, truth = scenario1_dataset(123)
    return ds, truth, knn_weights(ds, 5)
