import numpy as np
import pytest

from cpamp.model import ModelKind
from cpamp.priors import ChangePointPrior, GaussianRows, NoisePrior, PriorSpec

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.acceptance_lines = ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_prior(n, L=3, cov=None, sigma=0.1, sep_frac=0.2, count_weights=None, stride=1,
               variant="gaussian"):
    cov = np.eye(L) if cov is None else cov
    return PriorSpec(GaussianRows(cov), NoisePrior(variant, sigma),
                     ChangePointPrior(n, L, max(1, int(sep_frac * n)), count_weights, stride))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear():
    return ModelKind("linear", 0.1)
