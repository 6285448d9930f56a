import numpy as np
import pytest

from qrgt import random_stiefel, tangent_project


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_tangent(x: np.ndarray, rng: np.random.Generator, norm: float = 1.0) -> np.ndarray:
    """Random tangent vector at x with the requested Frobenius norm."""
    xi = tangent_project(x, rng.standard_normal(x.shape))
    return xi * (norm / np.linalg.norm(xi))


def stiefel_points(d: int, r: int, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [random_stiefel(d, r, rng) for _ in range(count)]
