import numpy as np
import pytest

from prefgame.core import make_rng, random_game


@pytest.fixture
def rng():
    return make_rng(12345)


def random_games(count, seed=0, n_range=(2, 7), **kwargs):
    """(spec, logits) pairs with n drawn from n_range and standard-normal logits."""
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(*n_range))
        out.append((random_game(n, rng, **kwargs), rng.normal(size=n)))
    return out


def assert_policy(pi, n=None):
    pi = np.asarray(pi)
    if n is not None:
        assert pi.shape == (n,)
    assert np.all(pi >= 0)
    np.testing.assert_allclose(pi.sum(), 1.0, atol=1e-12)
