import numpy as np
import pytest

from ovfl.environment import RoundDataset


def make_round(num_sus=2, in_dim=3, n_out=2, rows=8, n_train=4, seed=0, t=1):
    rng = np.random.default_rng(seed)
    feats = [rng.normal(size=(rows, in_dim)) for _ in range(num_sus)]
    labels = rng.normal(size=(rows, n_out))
    return RoundDataset(t, feats, labels, n_train)


@pytest.fixture
def small_round():
    return make_round()


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines (one per criterion) after the run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
