"""Classifier-sharing knowledge distillation toolkit.

Deterministic desk-scale distillation experiments: teacher-head sharing
(frozen teacher classifier as an auxiliary student head), the
three-phase student-head sharing pipeline, representation losses, and
embedding-quality diagnostics (teacher-student angle, MSC).
"""

from .autodiff import ShapeError, Tensor, grad_check
from .data import LabeledDataset, SyntheticSpec, batches, generate, load_csv, save_csv
from .losses import (LossBreakdown, LossParts, cross_entropy, kd_divergence, l2e,
                     th_kd_cross_entropy, th_kd_divergence, total_loss)
from .metrics import (EmbeddingSet, accuracy, embedding_angle, mean_angle, model_accuracy,
                      model_msc, msc_score)
from .models import (Architecture, ClassifierHead, DimensionAdapter, LinearLayer, MlpBackbone,
                     ModelBundle, attach_teacher_head, build_bundle, embed, predict,
                     transplant_head)
from .pipelines import (DistillConfig, ShkdResult, TrainReport, capacity_ablation,
                        combine_head_predictions, shkd_pipeline, train_student)
from .checkpoint import load_bundle, save_bundle

__all__ = [
    "ShapeError", "Tensor", "grad_check",
    "LabeledDataset", "SyntheticSpec", "batches", "generate", "load_csv", "save_csv",
    "LossBreakdown", "LossParts", "cross_entropy", "kd_divergence", "l2e",
    "th_kd_cross_entropy", "th_kd_divergence", "total_loss",
    "EmbeddingSet", "accuracy", "embedding_angle", "mean_angle", "model_accuracy",
    "model_msc", "msc_score",
    "Architecture", "ClassifierHead", "DimensionAdapter", "LinearLayer", "MlpBackbone",
    "ModelBundle", "attach_teacher_head", "build_bundle", "embed", "predict",
    "transplant_head",
    "DistillConfig", "ShkdResult", "TrainReport", "capacity_ablation",
    "combine_head_predictions", "shkd_pipeline", "train_student",
    "load_bundle", "save_bundle",
]

__version__ = "0.1.0"
