import numpy as np
import pytest

from dataset import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def write_file(tmp_path):
    """Write text to a file under tmp_path and return its path"""

    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def grouped_dataset(rng):
    """120 rows, 3 covariates, 6 categories with group-shifted means and a response"""
    n, m = 120, 6
    g = np.arange(n) % m
    shift = rng.normal(size=(m, 3))
    x = shift[g] + rng.normal(size=(n, 3))
    y = x @ np.array([1.0, -0.5, 0.25]) + shift[g, 0] + 0.1 * rng.normal(size=n)
    return Dataset(x=x, g=g, level_names=tuple(f"c{i}" for i in range(m)), y=y)


@pytest.fixture
def latent_direction_dataset(rng):
    """Group means on one line in covariate space; y follows the position on the line"""
    n, m, p = 400, 20, 5
    g = np.arange(n) % m
    position = np.linspace(-2.0, 2.0, m)
    direction = np.array([1.0, 0.5, -0.5, 0.0, 0.25])
    x = position[g, None] * direction + 0.2 * rng.normal(size=(n, p))
    y = 3.0 * position[g] + 0.1 * rng.normal(size=n)
    return Dataset(x=x, g=g, level_names=tuple(f"g{i + 1}" for i in range(m)), y=y)
