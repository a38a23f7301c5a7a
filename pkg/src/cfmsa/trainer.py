"""Deterministic mini-batch training with two Adam parameter groups.

Per batch, the calibration losses are computed and stepped first on the
masked-score constants, then the classification loss is stepped on the
branch parameters. The two groups share nothing: each has its own flat
parameter vector and its own optimizer state, so one group's steps can
never perturb the other, not even by rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .branches import backward_batch
from .counterfactual import ALL_MODES, assemble, mode_scores
from .data import Dataset, class_stats
from .losses import LossBreakdown, cls_loss_and_logit_grads, kl_terms_and_c_grads
from .model import (
    ModelParams,
    branch_logits_batch,
    init_model,
    main_vector,
    set_main_vector,
)

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "AdamState",
    "adam_step",
    "train",
    "mvsa_appendix_preset",
]


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol; defaults follow the published preset."""

    lr_main: float = 3e-3
    lr_c: float = 1e-5
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    class_weights: Sequence[float] | None = (1.68, 9.3, 3.36)
    c_mode: str = "nonuniform"
    hidden_dim: int = 32
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.lr_main <= 0 or self.lr_c <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ValueError("Adam betas must lie in [0, 1)")


def mvsa_appendix_preset() -> TrainConfig:
    """The real-feature protocol: 20 epochs, batch 16, lr 3e-3/1e-5, corpus weights."""
    return TrainConfig()


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter group."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> np.ndarray:
    """One bias-corrected Adam update; decay is decoupled (vanishes at 0).

    Mutates ``state`` and returns the new parameter vector.
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient, and state shapes must agree")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        new = new - lr * weight_decay * params
    return new


@dataclass
class TrainHistory:
    """Per-epoch mean loss terms and validation accuracy per inference mode."""

    losses: list[LossBreakdown] = field(default_factory=list)
    val_accuracy: list[dict[str, float]] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        out = []
        for epoch, loss in enumerate(self.losses):
            rec = {"epoch": epoch, **loss.as_dict()}
            if epoch < len(self.val_accuracy):
                rec["val_accuracy"] = self.val_accuracy[epoch]
            out.append(rec)
        return out


def _resolve_weights(config: TrainConfig, train_set: Dataset) -> np.ndarray:
    if config.class_weights is None:
        return class_stats(train_set).weights
    w = np.asarray(config.class_weights, dtype=np.float64)
    if w.size != train_set.num_classes:
        raise ValueError(
            f"class_weights has {w.size} entries, dataset has "
            f"{train_set.num_classes} classes"
        )
    if np.any(w <= 0):
        raise ValueError("class_weights must be positive")
    return w


def _mode_accuracy(model: ModelParams, text, image, labels) -> dict[str, float]:
    bundle = assemble(*branch_logits_batch(model, text, image)[:3], model.c)
    out = {}
    for mode in ALL_MODES:
        pred = np.argmax(mode_scores(bundle, mode), axis=-1)
        out[mode.value] = float(np.mean(pred == labels))
    return out


def train(
    config: TrainConfig, train_set: Dataset, val_set: Dataset | None = None
) -> tuple[ModelParams, TrainHistory]:
    """Train a fresh model; bitwise deterministic given (config, data).

    Training requires complete samples (both modalities); counterfactual
    masking is handled by the learnable constants, not by missing data.
    """
    config.validate()
    if not train_set.samples:
        raise ValueError("training set is empty")
    if val_set is not None and val_set.samples and (
        val_set.d_t != train_set.d_t
        or val_set.d_i != train_set.d_i
        or val_set.num_classes != train_set.num_classes
    ):
        raise ValueError("train and validation headers disagree")

    weights = _resolve_weights(config, train_set)
    stats = class_stats(train_set)
    model = init_model(
        d_t=train_set.d_t,
        d_i=train_set.d_i,
        num_classes=train_set.num_classes,
        hidden_dim=config.hidden_dim,
        c_mode=config.c_mode,
        seed=config.seed,
        class_freqs=stats.frequencies if config.c_mode == "prior" else None,
    )

    text, image, labels = train_set.matrices()
    val_arrays = None
    if val_set is not None and val_set.samples:
        val_arrays = val_set.matrices()

    n = len(train_set)
    rng = np.random.default_rng(config.seed)
    main_vec = main_vector(model)
    c_vec = model.c.to_vector()
    main_state = AdamState.zeros(main_vec.size)
    c_state = AdamState.zeros(c_vec.size)

    history = TrainHistory()
    term_names = ("l_cls_joint", "l_cls_text", "l_cls_image", "l_kl1", "l_kl2", "l_ti")
    for _epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = dict.fromkeys(term_names, 0.0)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            bt, bi, by = text[idx], image[idx], labels[idx]
            z_t, z_i, z_k, caches = branch_logits_batch(model, bt, bi)

            # Calibration losses first, on the masked-score constants.
            kl = kl_terms_and_c_grads(z_t, z_i, z_k, model.c)
            if model.c.learnable:
                c_grad = kl["l_kl1"][1] + kl["l_kl2"][1] + kl["l_ti"][1]
                c_vec = adam_step(
                    c_vec,
                    c_grad,
                    c_state,
                    config.lr_c,
                    config.adam_beta1,
                    config.adam_beta2,
                    config.adam_eps,
                    config.weight_decay,
                )
                model.c.set_vector(c_vec)

            # Classification loss second, on the branch parameters.
            (loss_j, loss_t, loss_i), (g_zt, g_zi, g_zk) = cls_loss_and_logit_grads(
                z_t, z_i, z_k, by, weights
            )
            main_grad = np.concatenate(
                [
                    backward_batch(g_zt, caches[0], model.text),
                    backward_batch(g_zi, caches[1], model.image),
                    backward_batch(g_zk, caches[2], model.joint),
                ]
            )
            main_vec = adam_step(
                main_vec,
                main_grad,
                main_state,
                config.lr_main,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_eps,
                config.weight_decay,
            )
            set_main_vector(model, main_vec)

            b = idx.size
            for name, value in (
                ("l_cls_joint", loss_j),
                ("l_cls_text", loss_t),
                ("l_cls_image", loss_i),
                ("l_kl1", kl["l_kl1"][0]),
                ("l_kl2", kl["l_kl2"][0]),
                ("l_ti", kl["l_ti"][0]),
            ):
                sums[name] += value * b

        history.losses.append(
            LossBreakdown.build(*(sums[name] / n for name in term_names))
        )
        if val_arrays is not None:
            history.val_accuracy.append(_mode_accuracy(model, *val_arrays))

    return model, history
