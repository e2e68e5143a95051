import numpy as np
import pytest
from hypothesis import settings, strategies as st

from deepdist.harness import ExperimentConfig, generate_phylogeny

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


def random_tree(n, seed, Delta=0.05, f=0.1, g=0.3, family="random"):
    cfg = ExperimentConfig(family=family, Delta=Delta, f=f, g=g, n_grid=(n,))
    return generate_phylogeny(cfg, np.random.default_rng(seed), n)


def balanced(h, seed, Delta=0.05, f=0.1, g=0.3):
    return random_tree(2**h, seed, Delta, f, g, family="homogeneous")


tree_args = st.tuples(st.integers(2, 14), st.integers(0, 2**32 - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
