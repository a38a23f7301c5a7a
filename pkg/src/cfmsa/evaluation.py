"""Metrics and mode-comparison reports.

All scalar metrics are derived from the confusion matrix, so recomputing
them from an emitted matrix reproduces the emitted values exactly. The test
suite cross-checks this implementation against scikit-learn.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .counterfactual import ALL_MODES, InferenceMode, assemble, mode_scores
from .data import Dataset
from .model import ModelParams, branch_logits_batch

__all__ = [
    "ModeMetrics",
    "EvalReport",
    "confusion_matrix",
    "metrics_from_confusion",
    "evaluate",
    "compare_report",
    "configured_threads",
]


def configured_threads() -> int:
    """Parallelism cap from CFMSA_THREADS (default 1)."""
    raw = os.environ.get("CFMSA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ModeMetrics:
    """Scalar metrics plus the confusion matrix for one inference mode."""

    accuracy: float
    macro_f1: float
    weighted_f1: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    confusion: tuple[tuple[int, ...], ...]  # rows true, cols predicted

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "support": list(self.support),
            "confusion": [list(row) for row in self.confusion],
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-mode metrics with deltas against the baseline rule when present."""

    label_names: tuple[str, ...]
    n_samples: int
    modes: dict[str, ModeMetrics]
    deltas: dict[str, dict[str, float]]

    def as_dict(self) -> dict:
        return {
            "label_names": list(self.label_names),
            "n_samples": self.n_samples,
            "modes": {k: v.as_dict() for k, v in self.modes.items()},
            "deltas": self.deltas,
        }

    def format_table(self) -> str:
        header = f"{'mode':<12} {'accuracy':>9} {'macro-F1':>9} {'wtd-F1':>9} {'d-acc':>8} {'d-mF1':>8}"
        lines = [header, "-" * len(header)]
        for mode, m in self.modes.items():
            delta = self.deltas.get(mode, {})
            d_acc = delta.get("accuracy", 0.0)
            d_f1 = delta.get("macro_f1", 0.0)
            lines.append(
                f"{mode:<12} {m.accuracy:>9.4f} {m.macro_f1:>9.4f} "
                f"{m.weighted_f1:>9.4f} {d_acc:>+8.4f} {d_f1:>+8.4f}"
            )
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts[true, predicted]."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays must have equal length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> ModeMetrics:
    """Accuracy, per-class precision/recall/F1, macro and weighted F1.

    Zero-support or never-predicted classes contribute 0 to the affected
    ratios and to macro-F1.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm).astype(np.float64)
    pred_totals = cm.sum(axis=0).astype(np.float64)
    true_totals = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(
        diag, pred_totals, out=np.zeros_like(diag), where=pred_totals > 0
    )
    recall = np.divide(
        diag, true_totals, out=np.zeros_like(diag), where=true_totals > 0
    )
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    return ModeMetrics(
        accuracy=float(diag.sum() / total),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * true_totals).sum() / total),
        precision=tuple(precision.tolist()),
        recall=tuple(recall.tolist()),
        f1=tuple(f1.tolist()),
        support=tuple(int(x) for x in true_totals),
        confusion=tuple(tuple(int(x) for x in row) for row in cm),
    )


def _predictions_chunk(model: ModelParams, text, image, modes) -> dict[str, np.ndarray]:
    bundle = assemble(*branch_logits_batch(model, text, image)[:3], model.c)
    return {
        InferenceMode(mode).value: np.argmax(mode_scores(bundle, mode), axis=-1)
        for mode in modes
    }


def evaluate(
    model: ModelParams,
    dataset: Dataset,
    modes=ALL_MODES,
    n_threads: int | None = None,
) -> EvalReport:
    """Score every sample once and report metrics per requested mode.

    Requires complete samples; incomplete records belong to the single-record
    inference path where unavailable modes are flagged explicitly. Chunks may
    be scored in parallel; results are concatenated in chunk order, so the
    report is identical for any thread count.
    """
    if not dataset.samples:
        raise ValueError("cannot evaluate an empty dataset")
    if model.d_t != dataset.d_t or model.d_i != dataset.d_i:
        raise ValueError("model and dataset dims disagree")
    if model.num_classes != dataset.num_classes:
        raise ValueError("model and dataset class counts disagree")
    modes = [InferenceMode(m) for m in modes]
    if not modes:
        raise ValueError("at least one inference mode is required")
    text, image, labels = dataset.matrices()

    n_threads = configured_threads() if n_threads is None else max(1, n_threads)
    if n_threads == 1 or len(dataset) < 2 * n_threads:
        per_mode = _predictions_chunk(model, text, image, modes)
    else:
        bounds = np.linspace(0, len(dataset), n_threads + 1, dtype=int)
        chunks = [(text[a:b], image[a:b]) for a, b in zip(bounds, bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(
                pool.map(lambda ti: _predictions_chunk(model, ti[0], ti[1], modes), chunks)
            )
        per_mode = {
            mode.value: np.concatenate([r[mode.value] for r in results])
            for mode in modes
        }

    mode_metrics: dict[str, ModeMetrics] = {}
    for mode in modes:
        cm = confusion_matrix(labels, per_mode[mode.value], dataset.num_classes)
        mode_metrics[mode.value] = metrics_from_confusion(cm)

    deltas: dict[str, dict[str, float]] = {}
    base_key = InferenceMode.TE_BASELINE.value
    if base_key in mode_metrics:
        base = mode_metrics[base_key]
        for key, m in mode_metrics.items():
            deltas[key] = {
                "accuracy": m.accuracy - base.accuracy,
                "macro_f1": m.macro_f1 - base.macro_f1,
                "weighted_f1": m.weighted_f1 - base.weighted_f1,
            }
    return EvalReport(
        label_names=dataset.label_names,
        n_samples=len(dataset),
        modes=mode_metrics,
        deltas=deltas,
    )


def compare_report(reports: dict[str, EvalReport]) -> str:
    """Side-by-side table: one row per mode, accuracy/macro-F1 per dataset.

    Deltas against each dataset's baseline rule are annotated when the
    baseline was evaluated.
    """
    if not reports:
        raise ValueError("at least one report is required")
    names = list(reports)
    all_modes: list[str] = []
    for report in reports.values():
        for mode in report.modes:
            if mode not in all_modes:
                all_modes.append(mode)
    width = 26
    header = f"{'mode':<12}" + "".join(f"{name:>{width}}" for name in names)
    sub = f"{'':<12}" + "".join(f"{'acc / macro-F1':>{width}}" for _ in names)
    lines = [header, sub, "-" * (12 + width * len(names))]
    for mode in all_modes:
        cells = []
        for name in names:
            report = reports[name]
            m = report.modes.get(mode)
            if m is None:
                cells.append(f"{'-':>{width}}")
                continue
            delta = report.deltas.get(mode, {}).get("accuracy")
            note = f" ({delta:+.4f})" if delta is not None else ""
            cells.append(f"{m.accuracy:.4f} / {m.macro_f1:.4f}{note}".rjust(width))
        lines.append(f"{mode:<12}" + "".join(cells))
    return "\n".join(lines)
