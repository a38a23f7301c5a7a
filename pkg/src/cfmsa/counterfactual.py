"""Masked-score assembly, sum fusion, causal effect vectors, and debiased inference.

The factual fused score combines the three branch logits through an
elementwise log-sigmoid of their sum. Counterfactual scores replace blocked
inputs with learnable constants (c1 for text, c2 for image, c3/c4 for the
joint mediator depending on which modality is present). Subtracting a masked
score from the factual one yields the indirect-effect vector used for
debiased prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numerics import check_finite, log_sigmoid

__all__ = [
    "InferenceMode",
    "ALL_MODES",
    "CParams",
    "C_MODES",
    "ScoreBundle",
    "fuse",
    "assemble",
    "total_effect",
    "tie_text",
    "tie_image",
    "tie_joint",
    "predict",
    "mode_scores",
]


class InferenceMode(str, Enum):
    """Available decision rules at inference time."""

    TE_BASELINE = "te"
    TIE_TEXT = "tie-text"
    TIE_IMAGE = "tie-image"
    TIE_JOINT = "tie-joint"


ALL_MODES = (
    InferenceMode.TE_BASELINE,
    InferenceMode.TIE_TEXT,
    InferenceMode.TIE_IMAGE,
    InferenceMode.TIE_JOINT,
)

C_MODES = ("random", "prior", "uniform", "nonuniform")


@dataclass
class CParams:
    """The masked-score constants c1..c4 under one of four hypotheses.

    random      frozen seeded standard-normal per-class vectors
    prior       frozen log class frequencies of the training split
    uniform     one learnable scalar shared by c1..c4 across all classes
    nonuniform  four learnable per-class vectors

    Storage is ``theta``: shape (1,) in uniform mode, (4, num_classes)
    otherwise.
    """

    mode: str
    num_classes: int
    theta: np.ndarray
    learnable: bool

    @classmethod
    def make(
        cls,
        mode: str,
        num_classes: int,
        seed: int = 0,
        class_freqs=None,
    ) -> "CParams":
        if mode not in C_MODES:
            raise ValueError(f"unknown c-mode {mode!r}, expected one of {C_MODES}")
        if num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if mode == "random":
            theta = np.random.default_rng(seed).standard_normal((4, num_classes))
            return cls(mode, num_classes, theta, learnable=False)
        if mode == "prior":
            if class_freqs is None:
                raise ValueError("prior c-mode needs the training class frequencies")
            freqs = check_finite(class_freqs, "class_freqs")
            if freqs.size != num_classes:
                raise ValueError("class_freqs length must equal num_classes")
            if np.any(freqs <= 0):
                raise ValueError("prior c-mode requires every class to be present")
            theta = np.tile(np.log(freqs), (4, 1))
            return cls(mode, num_classes, theta, learnable=False)
        if mode == "uniform":
            return cls(mode, num_classes, np.zeros(1), learnable=True)
        return cls(mode, num_classes, np.zeros((4, num_classes)), learnable=True)

    def _vec(self, idx: int) -> np.ndarray:
        if self.mode == "uniform":
            return np.full(self.num_classes, self.theta[0])
        return self.theta[idx].copy()

    @property
    def c1(self) -> np.ndarray:
        """Blocked-text constant."""
        return self._vec(0)

    @property
    def c2(self) -> np.ndarray:
        """Blocked-image constant."""
        return self._vec(1)

    @property
    def c3(self) -> np.ndarray:
        """Blocked-mediator constant when text is present and image absent."""
        return self._vec(2)

    @property
    def c4(self) -> np.ndarray:
        """Blocked-mediator constant when image is present and text absent."""
        return self._vec(3)

    def vectors(self) -> np.ndarray:
        """All four constants as a (4, num_classes) matrix."""
        return np.stack([self.c1, self.c2, self.c3, self.c4])

    def to_vector(self) -> np.ndarray:
        """Flat view of the learnable storage."""
        return self.theta.ravel().copy()

    def set_vector(self, vec: np.ndarray) -> None:
        vec = check_finite(vec, "c values")
        if vec.size != self.theta.size:
            raise ValueError(f"expected {self.theta.size} values, got {vec.size}")
        self.theta = vec.reshape(self.theta.shape).copy()

    def collect_grad(self, g1, g2, g3, g4) -> np.ndarray:
        """Fold per-constant gradients back onto the underlying storage.

        In uniform mode the single scalar appears in every entry of all four
        constants, so its gradient is the sum of all component gradients.
        """
        if self.mode == "uniform":
            return np.array([float(np.sum(g1) + np.sum(g2) + np.sum(g3) + np.sum(g4))])
        return np.stack([g1, g2, g3, g4]).ravel()

    def copy(self) -> "CParams":
        return CParams(self.mode, self.num_classes, self.theta.copy(), self.learnable)


@dataclass
class ScoreBundle:
    """Raw branch logits plus the fused scores training and inference need.

    ``fused_full`` is the factual score; ``fused_text_masked`` blocks image
    and mediator (text's direct path), ``fused_image_masked`` blocks text and
    mediator (image's direct path). ``fused_all_masked`` blocks everything
    and only feeds the diagnostic total effect; it cancels out of every
    indirect-effect rule. Arrays may carry leading batch axes; the class
    axis is always last.
    """

    z_t: np.ndarray
    z_i: np.ndarray
    z_k: np.ndarray
    fused_full: np.ndarray
    fused_text_masked: np.ndarray
    fused_image_masked: np.ndarray
    fused_all_masked: np.ndarray


def fuse(z_t, z_i, z_k) -> np.ndarray:
    """Sum fusion: elementwise log-sigmoid of the summed branch logits."""
    a = check_finite(z_t, "z_t")
    b = check_finite(z_i, "z_i")
    c = check_finite(z_k, "z_k")
    if not (a.shape[-1] == b.shape[-1] == c.shape[-1]):
        raise ValueError(
            f"class-axis mismatch: {a.shape[-1]}, {b.shape[-1]}, {c.shape[-1]}"
        )
    return log_sigmoid(a + b + c)


def assemble(z_t, z_i, z_k, c: CParams) -> ScoreBundle:
    """Build the factual and counterfactual fused scores for one sample (or batch).

    The text-masked score keeps z_t and substitutes (c2, c3) for the image
    and mediator logits; the image-masked score keeps z_i and substitutes
    (c1, c4).
    """
    z_t = check_finite(z_t, "z_t")
    z_i = check_finite(z_i, "z_i")
    z_k = check_finite(z_k, "z_k")
    if not (z_t.shape[-1] == z_i.shape[-1] == z_k.shape[-1] == c.num_classes):
        raise ValueError("branch logits and c-parameters disagree on num_classes")
    return ScoreBundle(
        z_t=z_t,
        z_i=z_i,
        z_k=z_k,
        fused_full=fuse(z_t, z_i, z_k),
        fused_text_masked=fuse(z_t, c.c2, c.c3),
        fused_image_masked=fuse(c.c1, z_i, c.c4),
        fused_all_masked=fuse(c.c1, c.c2, c.c3),
    )


def total_effect(bundle: ScoreBundle) -> np.ndarray:
    """Factual fused score minus the all-masked reference.

    Diagnostic only: the reference term cancels out of every indirect-effect
    rule below, so its mediator constant (c3) never influences predictions.
    """
    return bundle.fused_full - bundle.fused_all_masked


def tie_text(bundle: ScoreBundle) -> np.ndarray:
    """Indirect-effect vector with the text direct path removed."""
    return bundle.fused_full - bundle.fused_text_masked


def tie_image(bundle: ScoreBundle) -> np.ndarray:
    """Indirect-effect vector with the image direct path removed."""
    return bundle.fused_full - bundle.fused_image_masked


def tie_joint(bundle: ScoreBundle) -> np.ndarray:
    """Indirect-effect vector with both direct paths removed.

    The factual score is counted twice so each modality's bias is subtracted
    against its own copy; equals tie_text + tie_image exactly.
    """
    return (
        2.0 * bundle.fused_full
        - bundle.fused_text_masked
        - bundle.fused_image_masked
    )


def mode_scores(bundle: ScoreBundle, mode: InferenceMode) -> np.ndarray:
    """The decision-score vector a given inference mode ranks classes by."""
    mode = InferenceMode(mode)
    if mode is InferenceMode.TE_BASELINE:
        return bundle.fused_full
    if mode is InferenceMode.TIE_TEXT:
        return tie_text(bundle)
    if mode is InferenceMode.TIE_IMAGE:
        return tie_image(bundle)
    return tie_joint(bundle)


def predict(bundle: ScoreBundle, mode: InferenceMode):
    """Argmax class under the chosen rule; ties break to the lowest index.

    Returns an int for a single-sample bundle, an int array for batches.
    """
    scores = mode_scores(bundle, mode)
    idx = np.argmax(scores, axis=-1)
    return int(idx) if np.ndim(idx) == 0 else idx
