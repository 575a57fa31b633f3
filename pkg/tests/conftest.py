import numpy as np
import pytest

from bbbsim import RngStream


@pytest.fixture
def rng():
    return RngStream(20260809, 0)


def random_rotation(d: int, gen: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(gen.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def gen(seed=0) -> np.random.Generator:
    """Plain numpy generator for test-side randomness (not the package stream)."""
    return np.random.default_rng(seed)
