"""Feature-file ingestion, dataset statistics, splits, and the synthetic benchmark.

Feature files are JSON Lines (UTF-8, LF). Line 1 is the header::

    {"schema": "cfmsa-features/1", "d_t": int, "d_i": int,
     "labels": ["positive", "neutral", "negative"]}

Every following line is one sample::

    {"id": str, "text": [float, ...] | null, "image": [float, ...] | null,
     "label": str}

A null modality marks it absent; at least one must be present. Floats are
serialized with the shortest round-trip representation, so save followed by
load reproduces a dataset exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "FEATURE_SCHEMA",
    "FeatureFormatError",
    "Sample",
    "Dataset",
    "ClassStats",
    "SyntheticConfig",
    "MVSA_SINGLE_COUNTS",
    "MVSA_MULTIPLE_COUNTS",
    "load_features",
    "save_features",
    "class_stats",
    "gen_synthetic",
    "split",
]

FEATURE_SCHEMA = "cfmsa-features/1"

# Processed corpus class counts (positive, neutral, negative); the single-pair
# counts seed the default synthetic priors and the prior c hypothesis.
MVSA_SINGLE_COUNTS = (2683, 470, 1358)
MVSA_MULTIPLE_COUNTS = (9327, 1091, 6359)

SENTIMENT_LABELS = ("positive", "neutral", "negative")


class FeatureFormatError(ValueError):
    """A feature file violates the cfmsa-features/1 schema."""


@dataclass
class Sample:
    """One instance: optional modality feature vectors plus a class index."""

    id: str
    text: np.ndarray | None
    image: np.ndarray | None
    label: int


@dataclass
class Dataset:
    """Header-validated sample collection."""

    d_t: int
    d_i: int
    label_names: tuple[str, ...]
    samples: list[Sample]
    provenance: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def complete(self) -> bool:
        """True when every sample carries both modalities."""
        return all(s.text is not None and s.image is not None for s in self.samples)

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(text, image, labels) matrices; requires complete samples."""
        missing = next(
            (s.id for s in self.samples if s.text is None or s.image is None), None
        )
        if missing is not None:
            raise ValueError(f"sample {missing!r} is missing a modality")
        text = np.stack([s.text for s in self.samples]) if self.samples else np.empty((0, self.d_t))
        image = np.stack([s.image for s in self.samples]) if self.samples else np.empty((0, self.d_i))
        return text, image, self.labels()


def _parse_vector(value, dim: int, what: str, lineno: int) -> np.ndarray | None:
    if value is None:
        return None
    if not isinstance(value, list):
        raise FeatureFormatError(f"line {lineno}: {what} must be a list or null")
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or arr.size != dim:
        raise FeatureFormatError(
            f"line {lineno}: {what} has {arr.size} values, header says {dim}"
        )
    if not np.all(np.isfinite(arr)):
        raise FeatureFormatError(f"line {lineno}: {what} contains non-finite values")
    return arr


def load_features(path) -> Dataset:
    """Parse a cfmsa-features/1 file; errors carry the offending line number."""
    path = Path(path)
    raw = path.read_bytes()
    lines = raw.decode("utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FeatureFormatError("line 1: empty file, header expected")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FeatureFormatError(f"line 1: malformed header JSON ({e.msg})") from e
    if not isinstance(header, dict) or header.get("schema") != FEATURE_SCHEMA:
        raise FeatureFormatError(
            f"line 1: expected schema {FEATURE_SCHEMA!r}, got {header.get('schema')!r}"
        )
    try:
        d_t = int(header["d_t"])
        d_i = int(header["d_i"])
        labels = list(header["labels"])
    except (KeyError, TypeError, ValueError) as e:
        raise FeatureFormatError(f"line 1: header missing or malformed field ({e})") from e
    if d_t < 1 or d_i < 1:
        raise FeatureFormatError("line 1: d_t and d_i must be positive")
    if len(labels) < 2 or len(set(labels)) != len(labels):
        raise FeatureFormatError("line 1: labels must be at least two distinct names")
    label_index = {name: i for i, name in enumerate(labels)}

    samples: list[Sample] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise FeatureFormatError(f"line {lineno}: malformed JSON ({e.msg})") from e
        if not isinstance(rec, dict):
            raise FeatureFormatError(f"line {lineno}: sample must be an object")
        if not isinstance(rec.get("id"), str):
            raise FeatureFormatError(f"line {lineno}: missing string id")
        label_name = rec.get("label")
        if label_name not in label_index:
            raise FeatureFormatError(
                f"line {lineno}: unknown label {label_name!r}"
            )
        text = _parse_vector(rec.get("text"), d_t, "text", lineno)
        image = _parse_vector(rec.get("image"), d_i, "image", lineno)
        if text is None and image is None:
            raise FeatureFormatError(f"line {lineno}: no modality present")
        samples.append(Sample(rec["id"], text, image, label_index[label_name]))

    return Dataset(
        d_t=d_t,
        d_i=d_i,
        label_names=tuple(labels),
        samples=samples,
        provenance={
            "source": str(path),
            "sha256": hashlib.sha256(raw).hexdigest(),
        },
    )


def save_features(dataset: Dataset, path) -> None:
    """Write a cfmsa-features/1 file (UTF-8, LF, round-trip-safe floats)."""
    header = {
        "schema": FEATURE_SCHEMA,
        "d_t": dataset.d_t,
        "d_i": dataset.d_i,
        "labels": list(dataset.label_names),
    }
    out = [json.dumps(header)]
    for s in dataset.samples:
        out.append(
            json.dumps(
                {
                    "id": s.id,
                    "text": None if s.text is None else s.text.tolist(),
                    "image": None if s.image is None else s.image.tolist(),
                    "label": dataset.label_names[s.label],
                }
            )
        )
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    frequencies: np.ndarray
    weights: np.ndarray


def class_stats(dataset: Dataset) -> ClassStats:
    """Per-class counts, frequencies, and inverse-frequency weights.

    Weights are total / (num_classes * count), so the most frequent class
    gets the smallest weight. Classes with zero support get weight 0.0; they
    never contribute to a loss.
    """
    if not dataset.samples:
        raise ValueError("empty dataset has no class statistics")
    counts = np.bincount(dataset.labels(), minlength=dataset.num_classes)
    total = counts.sum()
    frequencies = counts / total
    weights = np.zeros(dataset.num_classes)
    nonzero = counts > 0
    weights[nonzero] = total / (dataset.num_classes * counts[nonzero])
    return ClassStats(counts=counts, frequencies=frequencies, weights=weights)


def _mvsa_single_priors() -> tuple[float, ...]:
    total = sum(MVSA_SINGLE_COUNTS)
    return tuple(c / total for c in MVSA_SINGLE_COUNTS)


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for the modality-bias benchmark.

    Image features carry the real class signal. Text features carry a weak
    copy of it plus a block of "sentiment word" indicator dims whose class
    agrees with the label with probability ``bias_strength`` during
    train/val. With ``bias_flip_at_test`` the indicator class is drawn
    uniformly at test time, so a text-reliant model is misled exactly there.
    """

    n_train: int = 3000
    n_val: int = 500
    n_test: int = 1000
    d_t: int = 16
    d_i: int = 16
    class_priors: tuple[float, ...] = field(default_factory=_mvsa_single_priors)
    signal_scale: float = 1.0
    noise_scale: float = 0.5
    bias_dims: int = 4
    bias_strength: float = 0.9
    bias_flip_at_test: bool = True
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.class_priors)

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")
        if self.n_train < 1:
            raise ValueError("n_train must be at least 1")
        priors = np.asarray(self.class_priors, dtype=np.float64)
        if priors.ndim != 1 or priors.size < 2:
            raise ValueError("class_priors needs at least two classes")
        if np.any(priors <= 0):
            raise ValueError("class_priors must be strictly positive")
        if abs(float(priors.sum()) - 1.0) > 1e-6:
            raise ValueError(f"class_priors must sum to 1, got {priors.sum()!r}")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ValueError("bias_strength must lie in [0, 1]")
        if not self.num_classes <= self.bias_dims <= self.d_t - 1:
            raise ValueError(
                "bias_dims must fit the class indicator and leave at least one "
                f"signal dim (got bias_dims={self.bias_dims}, d_t={self.d_t}, "
                f"num_classes={self.num_classes})"
            )
        if self.d_i < 1:
            raise ValueError("d_i must be positive")
        if self.noise_scale < 0 or self.signal_scale < 0:
            raise ValueError("scales must be non-negative")

    def digest(self) -> str:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["class_priors"] = list(doc["class_priors"])
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode("utf-8")
        ).hexdigest()


def gen_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic (train, val, test) datasets with a plantable text bias."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    num_classes = cfg.num_classes
    priors = np.asarray(cfg.class_priors, dtype=np.float64)
    priors = priors / priors.sum()
    label_names = (
        SENTIMENT_LABELS
        if num_classes == 3
        else tuple(f"class-{i}" for i in range(num_classes))
    )
    core_dims = cfg.d_t - cfg.bias_dims

    def unit_rows(n_rows: int, dim: int) -> np.ndarray:
        m = rng.standard_normal((n_rows, dim))
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    proto_image = unit_rows(num_classes, cfg.d_i)
    proto_text = unit_rows(num_classes, core_dims)

    def make_split(n: int, role: str, flip_bias: bool) -> Dataset:
        ys = rng.choice(num_classes, size=n, p=priors)
        if flip_bias:
            bias_class = rng.integers(0, num_classes, size=n)
        else:
            # Agree with the label w.p. rho, else uniform over the others, so
            # rho == 1/num_classes makes the indicator exactly uninformative.
            agree = rng.random(n) < cfg.bias_strength
            offset = rng.integers(1, num_classes, size=n)
            bias_class = np.where(agree, ys, (ys + offset) % num_classes)
        image = cfg.signal_scale * proto_image[ys] + cfg.noise_scale * rng.standard_normal(
            (n, cfg.d_i)
        )
        # Noise covers only the weak-signal coords; the bias block is a clean
        # class indicator, like a tokenized sentiment word.
        text = np.zeros((n, cfg.d_t))
        text[:, :core_dims] = 0.3 * cfg.signal_scale * proto_text[
            ys
        ] + cfg.noise_scale * rng.standard_normal((n, core_dims))
        text[np.arange(n), core_dims + bias_class] = cfg.signal_scale
        samples = [
            Sample(f"{role}-{i:05d}", text[i], image[i], int(ys[i]))
            for i in range(n)
        ]
        return Dataset(
            d_t=cfg.d_t,
            d_i=cfg.d_i,
            label_names=label_names,
            samples=samples,
            provenance={
                "source": "synthetic",
                "config_sha256": cfg.digest(),
                "split": role,
            },
        )

    train = make_split(cfg.n_train, "train", flip_bias=False)
    val = make_split(cfg.n_val, "val", flip_bias=False)
    test = make_split(cfg.n_test, "test", flip_bias=cfg.bias_flip_at_test)
    return train, val, test


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, ...]:
    """Label-stratified split: seeded per-class shuffle, then contiguous cuts.

    Cut points use cumulative rounding, so each split's per-class count is
    within one sample of the exact proportion. Sample order inside each
    split follows the original dataset order.
    """
    fracs = np.asarray(fractions, dtype=np.float64)
    if fracs.ndim != 1 or fracs.size < 1:
        raise ValueError("fractions must be a non-empty sequence")
    if np.any(fracs < 0):
        raise ValueError("fractions must be non-negative")
    if abs(float(fracs.sum()) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fracs.sum()!r}")
    rng = np.random.default_rng(seed)
    assignments: list[list[int]] = [[] for _ in fracs]
    labels = dataset.labels()
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        cuts = np.round(np.cumsum(fracs) * idx.size).astype(int)
        start = 0
        for part, stop in enumerate(cuts):
            assignments[part].extend(idx[start:stop].tolist())
            start = stop
    out = []
    for part, chosen in enumerate(assignments):
        chosen.sort()
        out.append(
            replace(
                dataset,
                samples=[dataset.samples[i] for i in chosen],
                provenance={**dataset.provenance, "split_part": part, "split_seed": seed},
            )
        )
    return tuple(out)
