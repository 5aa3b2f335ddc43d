import numpy as np
import pytest

from rlls.mdp import make_rng, random_mdp, twochain


@pytest.fixture
def chain():
    return twochain()


@pytest.fixture
def rng():
    return make_rng(12345)


def small_random(seed, H=3, n=3, A=2, law="deterministic-mean"):
    return random_mdp(make_rng(seed), H, n, A, law)


@pytest.fixture
def announce(capsys):
    """Print one line straight to the terminal, bypassing capture."""

    def _say(line):
        with capsys.disabled():
            print(line)

    return _say


def binom_slack(p, n, k=3.0):
    return k * np.sqrt(max(p * (1 - p), 1e-12) / n)
