"""Scikit-learn estimator facade over the counterfactual fusion pipeline.

``X`` is the horizontal concatenation of text and image feature columns;
``text_dim`` says where the text block ends. Fitting trains the three branch
scorers and the masked-score constants; prediction applies the configured
debiased inference rule.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .counterfactual import InferenceMode, assemble, mode_scores
from .data import Dataset, Sample, class_stats
from .model import branch_logits_batch
from .numerics import softmax
from .trainer import TrainConfig, train

__all__ = ["CounterfactualFusionClassifier"]


class CounterfactualFusionClassifier(BaseEstimator, ClassifierMixin):
    """Debiased multimodal classifier with a fit/predict interface.

    Parameters
    ----------
    text_dim : int
        Number of leading columns of X holding text features; the rest are
        image features.
    inference : str
        Decision rule: "te" (factual baseline), "tie-text", "tie-image", or
        "tie-joint" (indirect effects with the named direct path removed).
    c_mode : str
        Masked-constant hypothesis: "random", "prior", "uniform", or
        "nonuniform".
    class_weight : None, "balanced", or array of shape (n_classes,)
        Cross-entropy weights; "balanced" uses inverse class frequencies.
    Remaining parameters mirror the training protocol.
    """

    def __init__(
        self,
        text_dim: int = 16,
        inference: str = "tie-text",
        c_mode: str = "nonuniform",
        hidden_dim: int = 32,
        lr_main: float = 3e-3,
        lr_c: float = 1e-5,
        epochs: int = 20,
        batch_size: int = 16,
        class_weight=None,
        weight_decay: float = 0.0,
        seed: int = 0,
    ):
        self.text_dim = text_dim
        self.inference = inference
        self.c_mode = c_mode
        self.hidden_dim = hidden_dim
        self.lr_main = lr_main
        self.lr_c = lr_c
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weight = class_weight
        self.weight_decay = weight_decay
        self.seed = seed

    def _to_dataset(self, X: np.ndarray, y_idx: np.ndarray, names) -> Dataset:
        d_t = self.text_dim
        samples = [
            Sample(f"fit-{i:06d}", X[i, :d_t], X[i, d_t:], int(y_idx[i]))
            for i in range(X.shape[0])
        ]
        return Dataset(
            d_t=d_t,
            d_i=X.shape[1] - d_t,
            label_names=tuple(str(n) for n in names),
            samples=samples,
            provenance={"source": "estimator.fit"},
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not 0 < self.text_dim < X.shape[1]:
            raise ValueError(
                f"text_dim must split the feature columns, got text_dim="
                f"{self.text_dim} for {X.shape[1]} columns"
            )
        InferenceMode(self.inference)  # fail fast on typos
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        dataset = self._to_dataset(X, y_idx, self.classes_)

        if self.class_weight is None:
            weights = np.ones(self.classes_.size)
        elif isinstance(self.class_weight, str) and self.class_weight == "balanced":
            weights = class_stats(dataset).weights
        else:
            weights = np.asarray(self.class_weight, dtype=np.float64)

        config = TrainConfig(
            lr_main=self.lr_main,
            lr_c=self.lr_c,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            class_weights=weights,
            c_mode=self.c_mode,
            hidden_dim=self.hidden_dim,
            weight_decay=self.weight_decay,
        )
        self.model_, self.history_ = train(config, dataset, val_set=None)
        self.n_features_in_ = X.shape[1]
        return self

    def _bundle(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        text, image = X[:, : self.text_dim], X[:, self.text_dim :]
        return assemble(*branch_logits_batch(self.model_, text, image)[:3], self.model_.c)

    def decision_function(self, X) -> np.ndarray:
        """Per-class decision scores under the configured inference rule."""
        return mode_scores(self._bundle(X), InferenceMode(self.inference))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=-1)]

    def predict_proba(self, X) -> np.ndarray:
        """Softmax over the decision scores of the configured rule."""
        return softmax(self.decision_function(X))
