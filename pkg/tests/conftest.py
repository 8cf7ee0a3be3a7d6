import numpy as np
import pytest

from discreteglr import Dataset, VariableSpec


def make_dataset(y, predictors=None, discrete_covariates=None, continuous_covariates=None, level_offset=0):
    """Build a Dataset from plain arrays; discrete columns are 0-based integer codes."""
    specs = [VariableSpec("y", "response", "continuous")]
    data = {"y": np.asarray(y, dtype=float)}
    for name, col in (predictors or {}).items():
        specs.append(VariableSpec(name, "predictor", "discrete"))
        data[name] = np.asarray(col)
    for name, col in (discrete_covariates or {}).items():
        specs.append(VariableSpec(name, "covariate", "discrete"))
        data[name] = np.asarray(col)
    for name, col in (continuous_covariates or {}).items():
        specs.append(VariableSpec(name, "covariate", "continuous"))
        data[name] = np.asarray(col, dtype=float)
    return Dataset.from_arrays(specs, data, level_offset)


def random_codes(rng, n, k):
    """Codes in 0..k-1 with every level present."""
    codes = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    return rng.permutation(codes)


@pytest.fixture
def toy():
    return make_dataset([1.0, 2.0, 3.0, 5.0], predictors={"x": [0, 0, 1, 1]})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
