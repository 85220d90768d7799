import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


def rand_corr(rng, d, eigfloor=0.2):
    """Random correlation matrix with moderate conditioning."""
    A = rng.normal(size=(d, d + 2))
    S = A @ A.T / (d + 2) + eigfloor * np.eye(d)
    dd = np.sqrt(np.diag(S))
    return S / np.outer(dd, dd)


def richardson_fd(f, x0, h=1e-5):
    """Richardson-refined central difference."""
    d1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h)
    d2 = (f(x0 + h / 2) - f(x0 - h / 2)) / h
    return (4.0 * d2 - d1) / 3.0
