"""Float64 vector primitives shared by the loss modules and their tests."""
from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .errors import EmptyInput, NonFiniteEvaluation, ZeroVector

# Norms below this floor are indistinguishable from zero at float64 scale.
ZERO_NORM_FLOOR = 1e-30


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_FLOOR:
        raise ZeroVector(f"cannot normalize a vector of norm {norm!r}")
    return v / norm


def log_sum_exp(xs) -> float:
    """ln(sum(exp(xs))), max-shifted so large inputs do not overflow."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInput("log_sum_exp of an empty sequence")
    shift = float(np.max(xs))
    return shift + float(np.log(np.sum(np.exp(xs - shift))))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array.

    One probe pair per coordinate; works for arrays of any shape. This is
    the reference oracle the analytic gradients in this package are checked
    against.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.ravel()
    grad_flat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteEvaluation(f"probe at flat coordinate {i} was not finite")
        grad_flat[i] = (hi - lo) / (2.0 * eps)
    return grad
