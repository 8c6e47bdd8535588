"""satl: source-free domain adaptation of image classifiers.

Train a classifier on a labeled source domain, transplant its encoder into
a variational reconstruction model trained only on unlabeled target images
(KL + pixel + channel-Gram loss), then recompose the adapted encoder with
the original classifier head. Everything runs on a small built-in tensor
engine with reverse-mode autodiff; results are bit-reproducible from a
64-bit seed.
"""

__version__ = "0.1.0"

from .backend import active_backend
from .data import (
    Batch,
    DatasetIndex,
    DomainStyle,
    LabeledImage,
    STYLE_PRESETS,
    apply_domain_shift,
    batches,
    generate_synthetic,
    load_directory,
    load_pack,
    save_pack,
    stratified_split,
)
from .engine import Prng, Tensor, grad_check, no_grad, run_checks
from .errors import SatlError
from .losses import (
    LossWeights,
    cross_entropy,
    gram_matrix,
    kl_divergence,
    reconstruction_loss,
    satl_loss,
)
from .metrics import MetricsReport, RocCurve, confusion, derive_metrics, emit, roc_auc
from .models import (
    ClassifierModel,
    EncoderConfig,
    VaeModel,
    build_classifier,
    build_vae_from_encoder,
    compose_adapted,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import (
    AdaptConfig,
    DirectionResult,
    SgdMomentum,
    SourceTrainConfig,
    TrainingLog,
    adapt_target,
    evaluate,
    run_direction,
    train_source,
)

__all__ = [
    "AdaptConfig",
    "Batch",
    "ClassifierModel",
    "DatasetIndex",
    "DirectionResult",
    "DomainStyle",
    "EncoderConfig",
    "LabeledImage",
    "LossWeights",
    "MetricsReport",
    "Prng",
    "RocCurve",
    "STYLE_PRESETS",
    "SatlError",
    "SgdMomentum",
    "SourceTrainConfig",
    "Tensor",
    "TrainingLog",
    "VaeModel",
    "active_backend",
    "adapt_target",
    "apply_domain_shift",
    "batches",
    "build_classifier",
    "build_vae_from_encoder",
    "compose_adapted",
    "confusion",
    "cross_entropy",
    "derive_metrics",
    "emit",
    "evaluate",
    "generate_synthetic",
    "grad_check",
    "gram_matrix",
    "kl_divergence",
    "load_checkpoint",
    "load_directory",
    "load_pack",
    "no_grad",
    "reconstruction_loss",
    "roc_auc",
    "run_checks",
    "run_direction",
    "satl_loss",
    "save_checkpoint",
    "save_pack",
    "stratified_split",
    "train_source",
]
