"""Full model state: three branch scorers plus the masked-score constants.

Owns the parameter-vector views used by the two-group optimizer and the
JSON checkpoint format. Checkpoints round-trip bit-faithfully: floats are
serialized with Python's shortest round-trip representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .branches import (
    BranchParams,
    forward_batch,
    init_branch,
    num_params,
    params_from_vector,
    params_to_vector,
)
from .counterfactual import ALL_MODES, CParams, InferenceMode, ScoreBundle, assemble

__all__ = [
    "ModelParams",
    "init_model",
    "branch_logits_batch",
    "bundle_batch",
    "sample_bundle",
    "main_vector",
    "set_main_vector",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_document",
]

CHECKPOINT_SCHEMA = "cfmsa-checkpoint/1"


@dataclass
class ModelParams:
    """Everything the trainer updates, in its two optimizer groups."""

    text: BranchParams
    image: BranchParams
    joint: BranchParams
    c: CParams
    d_t: int
    d_i: int
    num_classes: int
    hidden_dim: int
    seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            text=params_from_vector(self.text, params_to_vector(self.text)),
            image=params_from_vector(self.image, params_to_vector(self.image)),
            joint=params_from_vector(self.joint, params_to_vector(self.joint)),
            c=self.c.copy(),
            d_t=self.d_t,
            d_i=self.d_i,
            num_classes=self.num_classes,
            hidden_dim=self.hidden_dim,
            seed=self.seed,
        )


def init_model(
    d_t: int,
    d_i: int,
    num_classes: int,
    hidden_dim: int = 32,
    c_mode: str = "nonuniform",
    seed: int = 0,
    class_freqs=None,
) -> ModelParams:
    """Seeded model; per-branch seeds are derived from the master seed."""
    child = np.random.SeedSequence(seed).generate_state(4)
    return ModelParams(
        text=init_branch(d_t, hidden_dim, num_classes, int(child[0])),
        image=init_branch(d_i, hidden_dim, num_classes, int(child[1])),
        joint=init_branch(d_t + d_i, hidden_dim, num_classes, int(child[2])),
        c=CParams.make(c_mode, num_classes, seed=int(child[3]), class_freqs=class_freqs),
        d_t=d_t,
        d_i=d_i,
        num_classes=num_classes,
        hidden_dim=hidden_dim,
        seed=seed,
    )


def branch_logits_batch(model: ModelParams, text: np.ndarray, image: np.ndarray):
    """Branch logits for (n, d_t) text and (n, d_i) image feature matrices.

    Returns (z_t, z_i, z_k, caches) with caches for the backward pass.
    """
    z_t, cache_t = forward_batch(text, model.text)
    z_i, cache_i = forward_batch(image, model.image)
    z_k, cache_k = forward_batch(np.concatenate([text, image], axis=1), model.joint)
    return z_t, z_i, z_k, (cache_t, cache_i, cache_k)


def bundle_batch(model: ModelParams, text: np.ndarray, image: np.ndarray) -> ScoreBundle:
    """Score bundle over a batch of complete samples."""
    z_t, z_i, z_k, _ = branch_logits_batch(model, text, image)
    return assemble(z_t, z_i, z_k, model.c)


def sample_bundle(
    model: ModelParams, text: np.ndarray | None, image: np.ndarray | None
) -> tuple[ScoreBundle, tuple[InferenceMode, ...]]:
    """Bundle for one sample, substituting constants for absent modalities.

    Returns the bundle and the inference modes that are meaningful for it.
    With a modality absent, the factual score already equals the masked one,
    so every indirect-effect vector degenerates to zero; only the baseline
    rule stays available.
    """
    if text is None and image is None:
        raise ValueError("sample has no modality present")
    c = model.c
    if text is not None and image is not None:
        z_t = forward_batch(np.asarray(text, dtype=np.float64)[None, :], model.text)[0][0]
        z_i = forward_batch(np.asarray(image, dtype=np.float64)[None, :], model.image)[0][0]
        joined = np.concatenate([text, image])[None, :]
        z_k = forward_batch(joined, model.joint)[0][0]
        return assemble(z_t, z_i, z_k, c), ALL_MODES
    if image is None:
        z_t = forward_batch(np.asarray(text, dtype=np.float64)[None, :], model.text)[0][0]
        bundle = assemble(z_t, c.c2, c.c3, c)
    else:
        z_i = forward_batch(np.asarray(image, dtype=np.float64)[None, :], model.image)[0][0]
        bundle = assemble(c.c1, z_i, c.c4, c)
    return bundle, (InferenceMode.TE_BASELINE,)


def main_vector(model: ModelParams) -> np.ndarray:
    """Flat branch-parameter group, in (text, image, joint) order."""
    return np.concatenate(
        [
            params_to_vector(model.text),
            params_to_vector(model.image),
            params_to_vector(model.joint),
        ]
    )


def set_main_vector(model: ModelParams, vec: np.ndarray) -> None:
    sizes = [num_params(model.text), num_params(model.image), num_params(model.joint)]
    if vec.size != sum(sizes):
        raise ValueError(f"expected {sum(sizes)} values, got {vec.size}")
    a, b = sizes[0], sizes[0] + sizes[1]
    model.text = params_from_vector(model.text, vec[:a])
    model.image = params_from_vector(model.image, vec[a:b])
    model.joint = params_from_vector(model.joint, vec[b:])


def _branch_doc(params: BranchParams) -> dict:
    return {
        "w_hidden": None if params.w_hidden is None else params.w_hidden.ravel().tolist(),
        "b_hidden": None if params.b_hidden is None else params.b_hidden.ravel().tolist(),
        "w_out": params.w_out.ravel().tolist(),
        "b_out": params.b_out.ravel().tolist(),
    }


def checkpoint_document(model: ModelParams, extra: dict | None = None) -> dict:
    """The checkpoint as a plain dict (flattened weight arrays per branch)."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "dims": {
            "d_t": model.d_t,
            "d_i": model.d_i,
            "num_classes": model.num_classes,
            "hidden_dim": model.hidden_dim,
        },
        "seed": model.seed,
        "branches": {
            "text": _branch_doc(model.text),
            "image": _branch_doc(model.image),
            "joint": _branch_doc(model.joint),
        },
        "c": {
            "mode": model.c.mode,
            "learnable": model.c.learnable,
            "theta": model.c.theta.ravel().tolist(),
        },
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(model: ModelParams, path, extra: dict | None = None) -> None:
    """Write the checkpoint JSON document (UTF-8, LF, trailing newline)."""
    text = json.dumps(checkpoint_document(model, extra))
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def _branch_from_doc(doc: dict, input_dim: int, hidden_dim: int, num_classes: int) -> BranchParams:
    template = BranchParams(
        input_dim, hidden_dim, num_classes, None, None, np.empty(0), np.empty(0)
    )
    if hidden_dim > 0:
        flat = np.concatenate(
            [
                np.asarray(doc["w_hidden"], dtype=np.float64),
                np.asarray(doc["b_hidden"], dtype=np.float64),
                np.asarray(doc["w_out"], dtype=np.float64),
                np.asarray(doc["b_out"], dtype=np.float64),
            ]
        )
    else:
        flat = np.concatenate(
            [
                np.asarray(doc["w_out"], dtype=np.float64),
                np.asarray(doc["b_out"], dtype=np.float64),
            ]
        )
    return params_from_vector(template, flat)


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(
            f"unsupported checkpoint schema {doc.get('schema_version')!r}"
        )
    dims = doc["dims"]
    d_t, d_i = int(dims["d_t"]), int(dims["d_i"])
    num_classes, hidden_dim = int(dims["num_classes"]), int(dims["hidden_dim"])
    c_doc = doc["c"]
    mode = c_doc["mode"]
    shape = (1,) if mode == "uniform" else (4, num_classes)
    c = CParams(
        mode=mode,
        num_classes=num_classes,
        theta=np.asarray(c_doc["theta"], dtype=np.float64).reshape(shape),
        learnable=bool(c_doc["learnable"]),
    )
    branches = doc["branches"]
    return ModelParams(
        text=_branch_from_doc(branches["text"], d_t, hidden_dim, num_classes),
        image=_branch_from_doc(branches["image"], d_i, hidden_dim, num_classes),
        joint=_branch_from_doc(branches["joint"], d_t + d_i, hidden_dim, num_classes),
        c=c,
        d_t=d_t,
        d_i=d_i,
        num_classes=num_classes,
        hidden_dim=hidden_dim,
        seed=int(doc["seed"]),
    )
