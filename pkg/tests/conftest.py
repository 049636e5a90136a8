import numpy as np
import pytest

from kdretrieval.synthetic import generate_synthetic


def finite_difference(fn, arr: np.ndarray, flat_index: int, h: float = 1e-5) -> float:
    """Central-difference derivative of fn() w.r.t. one parameter entry."""
    orig = arr.flat[flat_index]
    arr.flat[flat_index] = orig + h
    f_plus = fn()
    arr.flat[flat_index] = orig - h
    f_minus = fn()
    arr.flat[flat_index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)


@pytest.fixture(scope="session")
def tiny_world():
    """A small deterministic corpus + questions + oracle teacher."""
    return generate_synthetic(60, 8, 6, seed=5)
