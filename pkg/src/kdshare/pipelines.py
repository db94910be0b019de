"""Training orchestration: single distillation runs and the three-phase
shared-head pipeline.

Modes:
  vanilla  - plain cross-entropy, no teacher
  kd       - CE + soft-prediction divergence against a teacher
  l2e      - CE (+ optional KD) + normalized-embedding distance
  th_kd    - teacher's classifier attached as a frozen auxiliary head,
             CE and KD blended across the two heads by alpha_th

The shared-head pipeline trains a temporary student, transplants its
frozen head into a fresh teacher, then distills a final student that
keeps that same head.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .data import LabeledDataset, batches
from .losses import LossParts, total_loss
from .metrics import mean_angle, model_accuracy, model_msc
from .models import (Architecture, ModelBundle, attach_teacher_head, build_bundle, embed,
                     head_input, predict, transplant_head)

MODES = ("vanilla", "kd", "l2e", "th_kd")


@dataclass
class DistillConfig:
    """All scalars of one training run."""

    mode: str = "vanilla"
    alpha: float = 0.0
    beta: float = 0.0
    alpha_th: float = 1.0
    tau: float = 1.0
    optimizer: str = "adam"
    lr: float = 1e-2
    lr_schedule: str = "cosine"
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    freeze_student_head: bool = False
    squared_l2e: bool = False
    metric_every: int = 1

    def problems(self) -> list:
        """All validation failures at once (empty when valid)."""
        out = []
        if self.mode not in MODES:
            out.append(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            out.append(f"alpha: must be >= 0, got {self.alpha}")
        if self.beta < 0:
            out.append(f"beta: must be >= 0, got {self.beta}")
        if not 0.0 <= self.alpha_th <= 1.0:
            out.append(f"alpha_th: must be in [0, 1], got {self.alpha_th}")
        if not self.tau > 0:
            out.append(f"tau: must be > 0, got {self.tau}")
        if self.optimizer not in ("sgd", "adam"):
            out.append(f"optimizer: must be sgd or adam, got {self.optimizer!r}")
        if not self.lr > 0:
            out.append(f"lr: must be > 0, got {self.lr}")
        if self.lr_schedule not in ("constant", "cosine"):
            out.append(f"lr_schedule: must be constant or cosine, got {self.lr_schedule!r}")
        if self.epochs < 0:
            out.append(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            out.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.metric_every < 1:
            out.append(f"metric_every: must be >= 1, got {self.metric_every}")
        if self.mode == "vanilla" and (self.alpha != 0 or self.beta != 0):
            out.append(f"mode: vanilla forces alpha=0 and beta=0, "
                       f"got alpha={self.alpha} beta={self.beta}")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    kd: float
    rep: float
    total: float
    train_acc: float
    test_acc: float
    mean_angle: float  # radians; 0.0 when the run has no teacher
    msc: float


REPORT_HEADER = "epoch,ce,kd,rep,total,train_acc,test_acc,mean_angle_rad,mean_angle_deg,msc"


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    wall_seconds: float = 0.0
    bundle: Optional[ModelBundle] = None

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        for r in self.records:
            vals = [r.ce, r.kd, r.rep, r.total, r.train_acc, r.test_acc,
                    r.mean_angle, math.degrees(r.mean_angle), r.msc]
            lines.append(",".join([str(r.epoch)] + [repr(float(v)) for v in vals]))
        return "\n".join(lines) + "\n"


class Sgd:
    def step(self, params: list, lr: float) -> None:
        for p in params:
            p.data -= lr * p.grad


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: list, lr: float) -> None:
        self.t += 1
        for i, p in enumerate(params):
            if i not in self.m:
                self.m[i] = np.zeros_like(p.data)
                self.v[i] = np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * p.grad ** 2
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(name: str):
    return Adam() if name == "adam" else Sgd()


def _epoch_lr(config: DistillConfig, epoch: int) -> float:
    if config.lr_schedule == "constant" or config.epochs <= 1:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / (config.epochs - 1)))


def combine_head_predictions(p_s, p_s_th, alpha_th: float) -> np.ndarray:
    """Inference-time blend (1 - alpha_th) * p_s + alpha_th * p_s_th."""
    if not 0.0 <= alpha_th <= 1.0:
        raise ValueError(f"alpha_th must be in [0, 1], got {alpha_th}")
    a = p_s.data if isinstance(p_s, Tensor) else np.asarray(p_s, dtype=np.float64)
    b = p_s_th.data if isinstance(p_s_th, Tensor) else np.asarray(p_s_th, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"combine_head_predictions: shapes differ {a.shape} vs {b.shape}")
    return (1.0 - alpha_th) * a + alpha_th * b


@dataclass
class _TeacherOutputs:
    """Full-dataset teacher forward, computed once per run."""

    logits: np.ndarray
    z_raw: np.ndarray
    z_adapted: Optional[np.ndarray]

    def rep_target(self, width: int) -> np.ndarray:
        """Teacher embedding matching the student's rep width; prefers raw."""
        if self.z_raw.shape[-1] == width:
            return self.z_raw
        if self.z_adapted is not None and self.z_adapted.shape[-1] == width:
            return self.z_adapted
        raise ValueError(f"representation loss: student width {width} matches neither "
                         f"teacher raw ({self.z_raw.shape[-1]}) nor adapted embedding")


def _teacher_forward(teacher: ModelBundle, features: np.ndarray) -> _TeacherOutputs:
    x = Tensor(features)
    z = embed(teacher, x)
    z_ad = teacher.adapter(z) if teacher.adapter is not None else None
    logits = teacher.head.logits(head_input(teacher, teacher.head, z, z_ad))
    return _TeacherOutputs(logits=logits.data, z_raw=z.data,
                           z_adapted=None if z_ad is None else z_ad.data)


def _frozen_copy(bundle: ModelBundle) -> ModelBundle:
    copy = bundle.clone()
    for _, p in copy.named_parameters():
        p.set_trainable(False)
    return copy


def _student_probs(student: ModelBundle, x: Tensor):
    """(z_raw, z_adapted_or_raw, p_main, p_aux_or_None) for a batch."""
    z = embed(student, x)
    z_ad = student.adapter(z) if student.adapter is not None else None
    p_main = predict(student.head, head_input(student, student.head, z, z_ad))
    p_aux = None
    if student.aux_head is not None:
        p_aux = predict(student.aux_head, head_input(student, student.aux_head, z, z_ad))
    return z, (z_ad if z_ad is not None else z), p_main, p_aux


def batch_loss(student: ModelBundle, config: DistillConfig, x: Tensor, y,
               teacher_logits: Optional[np.ndarray] = None,
               teacher_rep: Optional[np.ndarray] = None):
    """Combined objective for one batch; returns a LossBreakdown.

    ``teacher_logits`` / ``teacher_rep`` are the precomputed teacher
    outputs for the batch rows (constants).
    """
    _, z_for_rep, p_main, p_aux = _student_probs(student, x)
    parts = LossParts(p_s=p_main, y=y, tau=config.tau, squared_l2e=config.squared_l2e)
    if teacher_logits is not None:
        parts.p_t = Tensor(teacher_logits).softmax(axis=-1)
    if config.beta > 0:
        if teacher_rep is None:
            raise ValueError("batch_loss: beta > 0 requires teacher_rep")
        parts.z_s = z_for_rep
        parts.z_t = Tensor(teacher_rep)
    if p_aux is not None:
        parts.p_s_th = p_aux
    return total_loss(parts, config.alpha, config.beta, config.alpha_th)


def _eval_accuracy(student: ModelBundle, config: DistillConfig,
                   features: np.ndarray, labels: np.ndarray) -> float:
    _, _, p_main, p_aux = _student_probs(student, Tensor(features))
    if config.mode == "th_kd" and p_aux is not None:
        p = combine_head_predictions(p_main, p_aux, config.alpha_th)
    else:
        p = p_main.data
    return float((p.argmax(axis=1) == labels).mean())


def train_student(config: DistillConfig, data: LabeledDataset,
                  teacher: Optional[ModelBundle] = None,
                  student_arch: Optional[Architecture] = None,
                  initial_student: Optional[ModelBundle] = None):
    """Train a student for ``config.epochs``; returns (bundle, TrainReport).

    Exactly one of ``student_arch`` / ``initial_student`` provides the
    model. The teacher is required for every mode except vanilla, is
    never mutated, and never receives gradient.
    """
    config.validate()
    if config.mode == "vanilla" and teacher is not None:
        raise ValueError("vanilla mode takes no teacher")
    if config.mode != "vanilla" and teacher is None:
        raise ValueError(f"mode {config.mode!r} requires a teacher bundle")
    if (student_arch is None) == (initial_student is None):
        raise ValueError("provide exactly one of student_arch / initial_student")

    teacher_frozen = _frozen_copy(teacher) if teacher is not None else None

    if initial_student is not None:
        student = initial_student
    else:
        adapter_to = None
        if teacher_frozen is not None and teacher_frozen.embedding_dim != student_arch.embedding_dim:
            adapter_to = teacher_frozen.embedding_dim
        student = build_bundle(student_arch, config.seed, adapter_to=adapter_to)

    if config.freeze_student_head:
        student.head.layer.set_trainable(False)
    if config.mode == "th_kd":
        attach_teacher_head(student, teacher_frozen.head)

    start = time.perf_counter()
    t_out = _teacher_forward(teacher_frozen, data.features) if teacher_frozen is not None else None

    params = student.trainable_parameters()
    optimizer = _make_optimizer(config.optimizer)
    x_train, y_train = data.subset("train")
    x_test, y_test = data.subset("test")

    report = TrainReport(bundle=student)
    last_angle, last_msc = 0.0, 0.0
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        sums = {"ce": 0.0, "kd": 0.0, "rep": 0.0, "total": 0.0}
        count = 0
        for step, batch_idx in enumerate(batches(data, "train", config.batch_size,
                                                 config.seed, epoch)):
            x = Tensor(data.features[batch_idx])
            y = data.labels[batch_idx]
            teacher_logits = teacher_rep = None
            if t_out is not None:
                teacher_logits = t_out.logits[batch_idx]
                if config.beta > 0:
                    width = student.adapted_dim()
                    teacher_rep = t_out.rep_target(width)[batch_idx]
            breakdown = batch_loss(student, config, x, y, teacher_logits, teacher_rep)
            if not math.isfinite(breakdown.total):
                raise ArithmeticError(
                    f"non-finite loss {breakdown.total} at epoch {epoch}, step {step}")
            breakdown.node.backward()
            optimizer.step(params, lr)

            n = len(batch_idx)
            sums["ce"] += breakdown.ce * n
            sums["kd"] += breakdown.kd * n
            sums["rep"] += breakdown.rep * n
            sums["total"] += breakdown.total * n
            count += n

        train_acc = _eval_accuracy(student, config, x_train, y_train)
        test_acc = _eval_accuracy(student, config, x_test, y_test)
        if epoch % config.metric_every == 0 or epoch == config.epochs - 1:
            if teacher_frozen is not None:
                last_angle = mean_angle(teacher_frozen, student, x_test)
            last_msc = model_msc(student, x_test, y_test)
        report.records.append(EpochRecord(
            epoch=epoch, ce=sums["ce"] / count, kd=sums["kd"] / count,
            rep=sums["rep"] / count, total=sums["total"] / count,
            train_acc=train_acc, test_acc=test_acc,
            mean_angle=last_angle, msc=last_msc))

    report.wall_seconds = time.perf_counter() - start
    return student, report


@dataclass
class ShkdResult:
    initial_student: ModelBundle
    teacher: ModelBundle
    student: ModelBundle
    reports: tuple  # (phase0, phase1, phase2) TrainReports
    head_chain_ok: bool


def _heads_equal(a, b) -> bool:
    return (np.array_equal(a.layer.W.data, b.layer.W.data)
            and np.array_equal(a.layer.b.data, b.layer.b.data))


def shkd_pipeline(cfg0: DistillConfig, cfg1: DistillConfig, cfg2: DistillConfig,
                  data: LabeledDataset, student_arch: Architecture,
                  teacher_arch: Architecture,
                  pretrained_teacher: Optional[ModelBundle] = None,
                  freeze_final_head: bool = True) -> ShkdResult:
    """Three-phase shared-head procedure.

    Phase 0 trains a temporary student (with plain KD when a pretrained
    teacher is supplied, otherwise vanilla). Phase 1 trains a fresh
    teacher whose classifier is the phase-0 student's head, frozen.
    Phase 2 distills a final student from that teacher; the final
    student starts from (and by default keeps, frozen) the same head.
    """
    if student_arch.num_classes != teacher_arch.num_classes:
        raise ValueError(f"head dims incompatible before training: student has "
                         f"{student_arch.num_classes} classes, teacher {teacher_arch.num_classes}")
    if cfg1.mode != "vanilla":
        raise ValueError("phase 1 (teacher with transplanted head) must use mode 'vanilla'")

    # Phase 0: temporary student.
    if pretrained_teacher is not None and cfg0.mode == "vanilla":
        cfg0 = replace(cfg0, mode="kd", alpha=cfg0.alpha or 1.0)
    s0, r0 = train_student(cfg0, data,
                           teacher=pretrained_teacher if cfg0.mode != "vanilla" else None,
                           student_arch=student_arch)

    # Phase 1: teacher regularized by the student's frozen head.
    adapter_to = student_arch.embedding_dim \
        if teacher_arch.embedding_dim != student_arch.embedding_dim else None
    teacher = build_bundle(teacher_arch, cfg1.seed, adapter_to=adapter_to)
    transplant_head(teacher, s0.head, freeze=True)
    teacher, r1 = train_student(cfg1, data, initial_student=teacher)

    # Phase 2: final student distilled from the tailored teacher. The
    # adapter maps the student into the teacher's raw embedding space
    # for the representation loss; the transplanted head keeps reading
    # the raw student embedding.
    final_adapter_to = teacher_arch.embedding_dim \
        if teacher_arch.embedding_dim != student_arch.embedding_dim else None
    final = build_bundle(student_arch, cfg2.seed, adapter_to=final_adapter_to)
    transplant_head(final, s0.head, freeze=freeze_final_head)
    final, r2 = train_student(cfg2, data, teacher=teacher, initial_student=final)

    chain_ok = _heads_equal(s0.head, teacher.head) and _heads_equal(s0.head, final.head)
    return ShkdResult(initial_student=s0, teacher=teacher, student=final,
                      reports=(r0, r1, r2), head_chain_ok=chain_ok)


def capacity_ablation(initial_student_archs: list, teacher_arch: Architecture,
                      final_student_arch: Architecture, data: LabeledDataset,
                      cfg0: DistillConfig, cfg1: DistillConfig, cfg2: DistillConfig) -> list:
    """One shared-head pipeline per initial-student architecture.

    Returns rows of (initial_arch, teacher_test_acc, final_student_test_acc).
    """
    rows = []
    x_test, y_test = data.subset("test")
    for arch in initial_student_archs:
        s0, _ = train_student(cfg0, data, student_arch=arch)
        adapter_to = arch.embedding_dim \
            if teacher_arch.embedding_dim != arch.embedding_dim else None
        teacher = build_bundle(teacher_arch, cfg1.seed, adapter_to=adapter_to)
        transplant_head(teacher, s0.head, freeze=True)
        teacher, _ = train_student(cfg1, data, initial_student=teacher)

        final_adapter_to = teacher_arch.embedding_dim \
            if teacher_arch.embedding_dim != final_student_arch.embedding_dim else None
        final = build_bundle(final_student_arch, cfg2.seed, adapter_to=final_adapter_to)
        transplant_head(final, s0.head, freeze=True)
        final, _ = train_student(cfg2, data, teacher=teacher, initial_student=final)

        rows.append({
            "initial_arch": arch.to_dict(),
            "teacher_test_acc": model_accuracy(teacher, x_test, y_test),
            "final_student_test_acc": model_accuracy(final, x_test, y_test),
        })
    return rows
