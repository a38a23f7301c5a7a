"""Feed-forward branch scorers over precomputed feature vectors.

Three scorers map features to per-class logits: one for text features, one
for image features, and one for the concatenation of both (the joint
branch). Each scorer is a single linear map when ``hidden_dim == 0`` or a
one-hidden-layer ReLU network otherwise. Parameter gradients are analytic
and verified against the finite-difference oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import check_finite

__all__ = [
    "BranchParams",
    "init_branch",
    "forward_batch",
    "backward_batch",
    "score",
    "score_text",
    "score_image",
    "score_joint",
    "params_to_vector",
    "params_from_vector",
    "num_params",
]


@dataclass
class BranchParams:
    """Weights of one scorer: input_dim -> hidden_dim (ReLU) -> num_classes.

    ``hidden_dim == 0`` degenerates to a single linear layer, in which case
    ``w_hidden`` and ``b_hidden`` are None and ``w_out`` maps the input
    directly to class logits.
    """

    input_dim: int
    hidden_dim: int
    num_classes: int
    w_hidden: np.ndarray | None  # (hidden_dim, input_dim)
    b_hidden: np.ndarray | None  # (hidden_dim,)
    w_out: np.ndarray  # (num_classes, hidden_dim or input_dim)
    b_out: np.ndarray  # (num_classes,)


def init_branch(
    input_dim: int, hidden_dim: int, num_classes: int, seed: int
) -> BranchParams:
    """Seeded Xavier-uniform weights on [-a, a], a = sqrt(6/(fan_in+fan_out)).

    Biases start at zero. Deterministic for a fixed (dims, seed) tuple.
    """
    if input_dim <= 0 or num_classes <= 0 or hidden_dim < 0:
        raise ValueError("dims must be positive (hidden_dim may be 0)")
    rng = np.random.default_rng(seed)
    if hidden_dim > 0:
        a1 = np.sqrt(6.0 / (input_dim + hidden_dim))
        w_hidden = rng.uniform(-a1, a1, size=(hidden_dim, input_dim))
        b_hidden = np.zeros(hidden_dim)
        a2 = np.sqrt(6.0 / (hidden_dim + num_classes))
        w_out = rng.uniform(-a2, a2, size=(num_classes, hidden_dim))
    else:
        w_hidden = None
        b_hidden = None
        a2 = np.sqrt(6.0 / (input_dim + num_classes))
        w_out = rng.uniform(-a2, a2, size=(num_classes, input_dim))
    return BranchParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        num_classes=num_classes,
        w_hidden=w_hidden,
        b_hidden=b_hidden,
        w_out=w_out,
        b_out=np.zeros(num_classes),
    )


def forward_batch(x: np.ndarray, params: BranchParams):
    """Forward pass for a (n, input_dim) batch.

    Returns (logits (n, num_classes), cache) where the cache holds the
    intermediates ``backward_batch`` needs.
    """
    arr = check_finite(x, "features")
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != params.input_dim:
        raise ValueError(
            f"feature dim {arr.shape[1]} != scorer input dim {params.input_dim}"
        )
    if params.hidden_dim > 0:
        pre = arr @ params.w_hidden.T + params.b_hidden
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ params.w_out.T + params.b_out
        cache = (arr, pre, hidden)
    else:
        logits = arr @ params.w_out.T + params.b_out
        cache = (arr, None, None)
    return logits, cache


def backward_batch(grad_logits: np.ndarray, cache, params: BranchParams) -> np.ndarray:
    """Parameter gradient (flat, ``params_to_vector`` order) for the batch.

    ``grad_logits`` is the upstream gradient of a scalar loss with respect to
    the logits, shape (n, num_classes); any batch scaling (e.g. 1/n for a
    mean loss) must already be folded in.
    """
    x, pre, hidden = cache
    g = np.asarray(grad_logits, dtype=np.float64)
    gw_out = g.T @ (hidden if params.hidden_dim > 0 else x)
    gb_out = g.sum(axis=0)
    if params.hidden_dim > 0:
        gh = g @ params.w_out
        ga = gh * (pre > 0)
        gw_hidden = ga.T @ x
        gb_hidden = ga.sum(axis=0)
        return np.concatenate(
            [gw_hidden.ravel(), gb_hidden.ravel(), gw_out.ravel(), gb_out.ravel()]
        )
    return np.concatenate([gw_out.ravel(), gb_out.ravel()])


def score(features: np.ndarray, params: BranchParams) -> np.ndarray:
    """Logits for a single feature vector."""
    logits, _ = forward_batch(np.asarray(features, dtype=np.float64)[None, :], params)
    return logits[0]


def score_text(text_features: np.ndarray, params: BranchParams) -> np.ndarray:
    """Text-branch logits."""
    return score(text_features, params)


def score_image(image_features: np.ndarray, params: BranchParams) -> np.ndarray:
    """Image-branch logits."""
    return score(image_features, params)


def score_joint(
    text_features: np.ndarray, image_features: np.ndarray, params: BranchParams
) -> np.ndarray:
    """Joint-branch logits over the concatenation of text and image features."""
    joined = np.concatenate(
        [
            np.asarray(text_features, dtype=np.float64),
            np.asarray(image_features, dtype=np.float64),
        ]
    )
    return score(joined, params)


def params_to_vector(params: BranchParams) -> np.ndarray:
    """Flatten weights in the fixed order (w_hidden, b_hidden, w_out, b_out)."""
    parts = []
    if params.hidden_dim > 0:
        parts.extend([params.w_hidden.ravel(), params.b_hidden.ravel()])
    parts.extend([params.w_out.ravel(), params.b_out.ravel()])
    return np.concatenate(parts)


def params_from_vector(template: BranchParams, vec: np.ndarray) -> BranchParams:
    """Rebuild a BranchParams with ``template``'s dims from a flat vector."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != num_params(template):
        raise ValueError(f"expected {num_params(template)} values, got {vec.size}")
    d, h, c = template.input_dim, template.hidden_dim, template.num_classes
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = vec[pos : pos + n].reshape(shape).copy()
        pos += n
        return out

    if h > 0:
        w_hidden = take((h, d))
        b_hidden = take((h,))
        w_out = take((c, h))
    else:
        w_hidden = None
        b_hidden = None
        w_out = take((c, d))
    b_out = take((c,))
    return BranchParams(d, h, c, w_hidden, b_hidden, w_out, b_out)


def num_params(params: BranchParams) -> int:
    d, h, c = params.input_dim, params.hidden_dim, params.num_classes
    if h > 0:
        return h * d + h + c * h + c
    return c * d + c
