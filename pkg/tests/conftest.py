import numpy as np
import pytest

from spisim.imgcore import Image


def dense_transform_matrix(m, kind):
    """Dense Kronecker-product oracle for the 1D fast transforms."""
    if kind == "walsh-hadamard":
        h2 = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    else:
        h2 = (1.0 - 1.0j) / 2.0 * np.array([[1.0, 1.0j], [1.0j, 1.0]])
    h = np.eye(1, dtype=h2.dtype)
    while h.shape[0] < m:
        h = np.kron(h2, h)
    return h


def dense_transform_2d(width, height, kind):
    """Dense oracle for the row-major 2D transform H_h (x) H_w."""
    return np.kron(dense_transform_matrix(height, kind),
                   dense_transform_matrix(width, kind))


def block_phantom(size=64):
    """Piecewise-constant 4-block test image."""
    x = np.zeros((size, size))
    half = size // 2
    x[:half, :half] = 0.2
    x[:half, half:] = 0.9
    x[half:, :half] = 0.55
    x[half:, half:] = 0.35
    return Image(x)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    return Image(rng.random((16, 16)))
