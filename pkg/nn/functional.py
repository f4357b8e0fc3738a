from typing import Tuple

import numpy as np
from scipy.special import expit


NORM_EPS = 1e-12


class NonFiniteError(FloatingPointError):
    """A tensor picked up NaN or Inf"""


def check_finite(name: str, x: np.ndarray):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {name}")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def normalize_rows(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise v / (||v|| + eps). Returns the result and the row norms"""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / (norms + NORM_EPS), norms


def normalize_rows_backward(v: np.ndarray, z: np.ndarray, norms: np.ndarray,
                            upstream: np.ndarray) -> np.ndarray:
    """
    Gradient of normalize_rows w.r.t. v.
    d/dv [v / (n + eps)] applied to u is (u - v_hat (z . u)) / (n + eps)
    with v_hat = v / n; a zero row has v_hat = 0.
    """
    safe = np.where(norms > 0, norms, 1.0)
    v_hat = np.where(norms > 0, v / safe, 0.0)
    proj = np.sum(z * upstream, axis=-1, keepdims=True)
    return (upstream - v_hat * proj) / (norms + NORM_EPS)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
