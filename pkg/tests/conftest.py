import numpy as np
import pytest

from kvgeom import KeyTensor


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def kt(matrix) -> KeyTensor:
    """Wrap an (N, d) matrix as a 1-batch 1-head KeyTensor."""
    arr = np.asarray(matrix, dtype=np.float64)
    return KeyTensor(arr[None, None, :, :])


def random_tensor(seed: int, batch=1, heads=1, seq=16, dim=8) -> KeyTensor:
    return KeyTensor(rng(seed).normal(size=(batch, heads, seq, dim)))


@pytest.fixture
def tiny_tensor():
    return random_tensor(7, batch=2, heads=3, seq=10, dim=4)
