import numpy as np
import pytest

from hispo.envs import gen_dataset, make_env
from hispo import nnet
from hispo.nnet import NetShape


@pytest.fixture(scope="session")
def u_data():
    return gen_dataset(make_env("U", "N"), 30, seed=3)


@pytest.fixture(scope="session")
def u_ia_data():
    return gen_dataset(make_env("U", "IA"), 30, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_shape(in_dim=3, hidden=(5, 4), out_dim=2, layernorm=True, dropout=0.0):
    return NetShape(in_dim, hidden, out_dim, layernorm, dropout)


def fd_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def random_net_case(rng):
    """A random small net with parameters, inputs and targets for gradient checks."""
    depth = rng.integers(0, 3)
    shape = NetShape(int(rng.integers(1, 6)), tuple(int(h) for h in rng.integers(1, 8, size=depth)),
                     int(rng.integers(1, 4)), bool(rng.integers(2)))
    theta = rng.normal(scale=0.7, size=nnet.param_count(shape))
    x = rng.normal(size=(int(rng.integers(1, 6)), shape.input_dim))
    y = rng.normal(size=(len(x), shape.output_dim))
    return shape, theta, x, y
