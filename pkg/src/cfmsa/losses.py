"""The composite training objective and its analytic gradients.

Four terms with a strict routing rule:

* classification: weighted cross-entropy on the factual fused score plus
  the raw text and image logits. Updates branch parameters only; the
  masked constants never enter these terms.
* sharpness calibration (kl1/kl2): cross-entropy from the factual fused
  distribution (a detached target) to each masked distribution. Updates the
  masked constants only.
* mutual elimination (ti): symmetric class-count-scaled KL between the two
  masked distributions, pulling them toward each other. Updates the masked
  constants only.

Routing is structural: the gradient functions below return gradients for
exactly one parameter group, so the other group cannot drift even by
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counterfactual import CParams, ScoreBundle
from .numerics import (
    check_finite,
    cross_entropy,
    kl_mean,
    log_softmax,
    sigmoid,
    softmax,
)

__all__ = [
    "LossBreakdown",
    "TERM_ROUTING",
    "l_cls",
    "l_kl",
    "l_ti",
    "total_loss",
    "cls_loss_and_logit_grads",
    "kl_terms_and_c_grads",
]

# Which optimizer group each objective term feeds.
TERM_ROUTING = {
    "l_cls_joint": "branch-params",
    "l_cls_text": "branch-params",
    "l_cls_image": "branch-params",
    "l_kl1": "c-params",
    "l_kl2": "c-params",
    "l_ti": "c-params",
}


@dataclass(frozen=True)
class LossBreakdown:
    """All objective terms for one sample or one batch mean, plus their sum."""

    l_cls_joint: float
    l_cls_text: float
    l_cls_image: float
    l_kl1: float
    l_kl2: float
    l_ti: float
    total: float

    @classmethod
    def build(cls, l_cls_joint, l_cls_text, l_cls_image, l_kl1, l_kl2, l_ti):
        total = (
            float(l_cls_joint)
            + float(l_cls_text)
            + float(l_cls_image)
            + float(l_kl1)
            + float(l_kl2)
            + float(l_ti)
        )
        return cls(
            float(l_cls_joint),
            float(l_cls_text),
            float(l_cls_image),
            float(l_kl1),
            float(l_kl2),
            float(l_ti),
            total,
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "l_cls_joint": self.l_cls_joint,
            "l_cls_text": self.l_cls_text,
            "l_cls_image": self.l_cls_image,
            "l_kl1": self.l_kl1,
            "l_kl2": self.l_kl2,
            "l_ti": self.l_ti,
            "total": self.total,
        }


def l_cls(bundle: ScoreBundle, label: int, weights) -> tuple[float, float, float]:
    """Weighted cross-entropy on (fused_full, z_t, z_i) for one sample."""
    return (
        cross_entropy(bundle.fused_full, label, weights),
        cross_entropy(bundle.z_t, label, weights),
        cross_entropy(bundle.z_i, label, weights),
    )


def l_kl(bundle: ScoreBundle) -> tuple[float, float]:
    """Sharpness-calibration terms for one sample.

    Each is (1/C) * sum_y -p_full(y) log p_masked(y), with p_full treated as
    a constant target.
    """
    p_full = softmax(bundle.fused_full)
    c = p_full.shape[-1]
    kl1 = float(-np.sum(p_full * log_softmax(bundle.fused_text_masked)) / c)
    kl2 = float(-np.sum(p_full * log_softmax(bundle.fused_image_masked)) / c)
    return kl1, kl2


def l_ti(bundle: ScoreBundle) -> float:
    """Symmetric scaled KL between the two masked distributions."""
    p = softmax(bundle.fused_text_masked)
    q = softmax(bundle.fused_image_masked)
    return kl_mean(p, q) + kl_mean(q, p)


def total_loss(bundle: ScoreBundle, label: int, weights) -> LossBreakdown:
    """All six terms on one sample; total is their plain sum."""
    joint, text, image = l_cls(bundle, label, weights)
    kl1, kl2 = l_kl(bundle)
    return LossBreakdown.build(joint, text, image, kl1, kl2, l_ti(bundle))


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cls_loss_and_logit_grads(z_t, z_i, z_k, labels, weights):
    """Batch-mean classification terms and their gradients in logit space.

    Returns ((joint, text, image) means, (g_zt, g_zi, g_zk)) where each
    gradient has shape (n, num_classes) and already carries the 1/n batch
    scaling. The fused term contributes to all three logit gradients through
    the summed pre-fusion score; the unimodal terms add their own softmax
    gradients on top.
    """
    z_t = check_finite(z_t, "z_t")
    z_i = check_finite(z_i, "z_i")
    z_k = check_finite(z_k, "z_k")
    labels = np.asarray(labels, dtype=np.int64)
    w = check_finite(weights, "weights")
    n, c = z_t.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError("label out of range")
    onehot = _onehot(labels, c)
    wl = w[labels]  # (n,)

    s = z_t + z_i + z_k
    fused = np.minimum(s, 0.0) - np.log1p(np.exp(-np.abs(s)))  # log-sigmoid
    logp_fused = log_softmax(fused)
    loss_joint = float(np.mean(-wl * logp_fused[np.arange(n), labels]))
    g_fused = (softmax(fused) - onehot) * wl[:, None] / n
    g_s = g_fused * (1.0 - sigmoid(s))

    logp_t = log_softmax(z_t)
    loss_text = float(np.mean(-wl * logp_t[np.arange(n), labels]))
    g_t_own = (softmax(z_t) - onehot) * wl[:, None] / n

    logp_i = log_softmax(z_i)
    loss_image = float(np.mean(-wl * logp_i[np.arange(n), labels]))
    g_i_own = (softmax(z_i) - onehot) * wl[:, None] / n

    return (loss_joint, loss_text, loss_image), (g_s + g_t_own, g_s + g_i_own, g_s)


def kl_terms_and_c_grads(z_t, z_i, z_k, c: CParams):
    """Batch-mean calibration terms and their gradients on the c storage.

    Returns {"l_kl1": (value, grad), "l_kl2": (value, grad),
    "l_ti": (value, grad)} where each grad is flat in the c storage layout.
    Branch logits are constants here by the routing rule; the factual
    distribution is a detached target.
    """
    z_t = check_finite(z_t, "z_t")
    z_i = check_finite(z_i, "z_i")
    z_k = check_finite(z_k, "z_k")
    n, num_classes = z_t.shape
    scale = 1.0 / (num_classes * n)

    s = z_t + z_i + z_k
    fused = np.minimum(s, 0.0) - np.log1p(np.exp(-np.abs(s)))
    p_target = softmax(fused)  # detached

    u = z_t + c.c2 + c.c3  # pre-fusion, text kept
    v = c.c1 + z_i + c.c4  # pre-fusion, image kept
    g_tm = np.minimum(u, 0.0) - np.log1p(np.exp(-np.abs(u)))
    g_im = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    log_p = log_softmax(g_tm)
    log_q = log_softmax(g_im)
    p = np.exp(log_p)
    q = np.exp(log_q)
    du = 1.0 - sigmoid(u)  # d log-sigmoid
    dv = 1.0 - sigmoid(v)

    zero = np.zeros(num_classes)

    # kl1: target -> text-kept masked distribution; flows into (c2, c3).
    val_kl1 = float(-np.sum(p_target * log_p) * scale)
    d_g = (p - p_target) * scale
    g23 = (d_g * du).sum(axis=0)
    grad_kl1 = c.collect_grad(zero, g23, g23, zero)

    # kl2: target -> image-kept masked distribution; flows into (c1, c4).
    val_kl2 = float(-np.sum(p_target * log_q) * scale)
    d_m = (q - p_target) * scale
    g14 = (d_m * dv).sum(axis=0)
    grad_kl2 = c.collect_grad(g14, zero, zero, g14)

    # ti: symmetric KL between the two masked distributions; flows into all four.
    r = log_p - log_q
    val_ti = float((np.sum(p * r) + np.sum(q * (-r))) * scale)
    kp = np.sum(p * r, axis=-1, keepdims=True)
    kq = np.sum(q * (-r), axis=-1, keepdims=True)
    d_g_ti = (p * (r - kp) + (p - q)) * scale
    d_m_ti = (q * (-r - kq) + (q - p)) * scale
    ti_23 = (d_g_ti * du).sum(axis=0)
    ti_14 = (d_m_ti * dv).sum(axis=0)
    grad_ti = c.collect_grad(ti_14, ti_23, ti_23, ti_14)

    return {
        "l_kl1": (val_kl1, grad_kl1),
        "l_kl2": (val_kl2, grad_kl2),
        "l_ti": (val_ti, grad_ti),
    }
