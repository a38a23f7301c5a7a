"""Differentiable numeric primitives shared by the fusion, loss, and training code.

Everything here operates on float64 numpy arrays and is pure: no global
state, safe to call from any number of threads. ``finite_diff_grad`` is the
independent oracle against which every analytic gradient in this package is
verified.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "check_finite",
    "check_prob_vector",
    "softmax",
    "log_softmax",
    "sigmoid",
    "log_sigmoid",
    "kl_mean",
    "cross_entropy",
    "finite_diff_grad",
]

# Tolerance for probability-vector normalization checks.
PROB_SUM_TOL = 1e-12


def check_finite(values, name: str = "input") -> np.ndarray:
    """Coerce to float64 and reject NaN/Inf entries."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_prob_vector(values, name: str = "probabilities") -> np.ndarray:
    """Validate a probability vector: strictly positive, sums to 1."""
    arr = check_finite(values, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name} must be strictly positive everywhere")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"{name} must sum to 1 (got {total!r})")
    return arr


def softmax(logits) -> np.ndarray:
    """Softmax along the last axis, stabilized by max subtraction."""
    arr = check_finite(logits, "logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    """Log of softmax along the last axis, computed without forming exp ratios."""
    arr = check_finite(logits, "logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, overflow-safe on both tails."""
    arr = np.asarray(x, dtype=np.float64)
    # exp(-|x|) never overflows; the two branches share it.
    e = np.exp(-np.abs(arr))
    return np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x) -> np.ndarray:
    """Elementwise log(sigmoid(x)) in the stable form min(x, 0) - log1p(e^-|x|).

    Output is strictly negative for inputs below the float64 underflow
    threshold of exp (|x| < ~745), which covers every logit this package
    produces.
    """
    arr = check_finite(x, "logits")
    return np.minimum(arr, 0.0) - np.log1p(np.exp(-np.abs(arr)))


def kl_mean(p, q) -> float:
    """Class-count-scaled KL divergence (1/C) * sum_y p_y log(p_y / q_y).

    Both arguments must be valid probability vectors of equal length. A zero
    entry in ``q`` makes the divergence undefined and raises.
    """
    p_arr = check_prob_vector(p, "p")
    q_arr = check_prob_vector(q, "q")
    if p_arr.shape != q_arr.shape:
        raise ValueError(f"shape mismatch: {p_arr.shape} vs {q_arr.shape}")
    return float(np.sum(p_arr * (np.log(p_arr) - np.log(q_arr))) / p_arr.size)


def cross_entropy(logits, label: int, weights) -> float:
    """Weighted negative log softmax probability of ``label``.

    Returns -weights[label] * log softmax(logits)[label]. ``logits`` may be
    raw branch scores or fused log-sigmoid scores; both are treated as
    unnormalized class scores.
    """
    arr = check_finite(logits, "logits")
    if arr.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {arr.shape}")
    w = check_finite(weights, "weights")
    if w.shape != arr.shape:
        raise ValueError(f"weights length {w.size} != num_classes {arr.size}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if not 0 <= int(label) < arr.size:
        raise ValueError(f"label {label} out of range for {arr.size} classes")
    return float(-w[label] * log_softmax(arr)[label])


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / 2h.

    Independent of every analytic gradient in this package; used to verify
    them. ``f`` must return a finite scalar at each probe point.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x0)
    flat = x0.ravel()
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        up = float(f(probe.reshape(x0.shape)))
        probe[i] = flat[i] - h
        down = float(f(probe.reshape(x0.shape)))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        grad.ravel()[i] = (up - down) / (2.0 * h)
    return grad
