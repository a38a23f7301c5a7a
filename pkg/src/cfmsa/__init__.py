"""Counterfactual multimodal fusion over precomputed text/image features.

Three branch scorers produce per-class logits that are fused by an
elementwise log-sigmoid of their sum. Learnable constants stand in for
blocked inputs, letting the model answer "what would the score have been
without this modality" and subtract a modality's direct contribution from
the factual score at inference time. Training combines weighted
cross-entropy on the branches with KL objectives that calibrate the masked
constants, under a strict rule that each objective updates only its own
parameter group.
"""

__version__ = "0.1.0"

from .counterfactual import (
    ALL_MODES,
    CParams,
    InferenceMode,
    ScoreBundle,
    assemble,
    fuse,
    mode_scores,
    predict,
    tie_image,
    tie_joint,
    tie_text,
    total_effect,
)
from .branches import (
    BranchParams,
    init_branch,
    score,
    score_image,
    score_joint,
    score_text,
)
from .data import (
    ClassStats,
    Dataset,
    FeatureFormatError,
    Sample,
    SyntheticConfig,
    class_stats,
    gen_synthetic,
    load_features,
    save_features,
    split,
)
from .estimator import CounterfactualFusionClassifier
from .evaluation import (
    EvalReport,
    ModeMetrics,
    compare_report,
    confusion_matrix,
    evaluate,
    metrics_from_confusion,
)
from .gradcheck import run_gradient_checks
from .losses import LossBreakdown, TERM_ROUTING, l_cls, l_kl, l_ti, total_loss
from .model import (
    ModelParams,
    bundle_batch,
    init_model,
    load_checkpoint,
    sample_bundle,
    save_checkpoint,
)
from .numerics import (
    cross_entropy,
    finite_diff_grad,
    kl_mean,
    log_sigmoid,
    log_softmax,
    sigmoid,
    softmax,
)
from .trainer import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    mvsa_appendix_preset,
    train,
)

__all__ = [
    "__version__",
    "ALL_MODES",
    "AdamState",
    "BranchParams",
    "CParams",
    "ClassStats",
    "CounterfactualFusionClassifier",
    "Dataset",
    "EvalReport",
    "FeatureFormatError",
    "InferenceMode",
    "LossBreakdown",
    "ModeMetrics",
    "ModelParams",
    "Sample",
    "ScoreBundle",
    "SyntheticConfig",
    "TERM_ROUTING",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "assemble",
    "bundle_batch",
    "class_stats",
    "compare_report",
    "confusion_matrix",
    "cross_entropy",
    "evaluate",
    "finite_diff_grad",
    "fuse",
    "gen_synthetic",
    "init_branch",
    "init_model",
    "kl_mean",
    "l_cls",
    "l_kl",
    "l_ti",
    "load_checkpoint",
    "load_features",
    "log_sigmoid",
    "log_softmax",
    "metrics_from_confusion",
    "mode_scores",
    "mvsa_appendix_preset",
    "predict",
    "run_gradient_checks",
    "sample_bundle",
    "save_checkpoint",
    "save_features",
    "score",
    "score_image",
    "score_joint",
    "score_text",
    "sigmoid",
    "softmax",
    "split",
    "tie_image",
    "tie_joint",
    "tie_text",
    "total_effect",
    "total_loss",
    "train",
]
