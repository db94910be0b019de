"""Distillation loss terms and the combined training objective.

All functions take and return autodiff Tensors so gradients flow to the
student; teacher-side inputs are always detached inside the functions.
Probability inputs produced by ``softmax`` still carry their logits as a
graph parent, which lets cross-entropy and the KD divergence use the
fused log-softmax path (and lets temperature re-softmax the logits).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import ShapeError, Tensor


def _logits_of(p: Tensor) -> Optional[Tensor]:
    """The logits behind a softmax output, if p was built by softmax."""
    if p._op == "softmax":
        return p._parents[0]
    return None


def _label_indices(labels: Union[np.ndarray, list], num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 2:  # one-hot rows
        y = y.argmax(axis=1)
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"label out of range [0, {num_classes}): {y.min()}..{y.max()}")
    return y


def cross_entropy(p: Tensor, y) -> Tensor:
    """Mean over the batch of -log p[y].

    Uses the fused log-softmax of the underlying logits when ``p`` came
    from a softmax node, avoiding log(0) for extreme logits. Gathering
    the labelled entry before the log keeps exact zeros in the other
    columns from poisoning the result.
    """
    idx = _label_indices(y, p.shape[-1])
    logits = _logits_of(p)
    if logits is not None:
        picked = logits.log_softmax(axis=-1)[np.arange(idx.shape[0]), idx]
    else:
        picked = p[np.arange(idx.shape[0]), idx].log()
    return -picked.mean()


def kd_divergence(p_t: Tensor, p_s: Tensor, tau: float = 1.0) -> Tensor:
    """Temperature-scaled KL(teacher || student), mean over the batch, times tau^2.

    For tau != 1 both sides are re-softmaxed from logits/tau, so both
    probability tensors must have been produced by softmax. The teacher
    side never receives gradient.
    """
    if tau <= 0:
        raise ValueError(f"kd_divergence: tau must be positive, got {tau}")
    if p_t.shape != p_s.shape:
        raise ShapeError(f"kd_divergence: shapes differ {p_t.shape} vs {p_s.shape}")
    logits_t, logits_s = _logits_of(p_t), _logits_of(p_s)
    if tau != 1.0:
        if logits_t is None or logits_s is None:
            raise ValueError("kd_divergence: tau != 1 requires softmax-produced probabilities "
                             "(logits unavailable)")
        # compute the teacher's log-probs with the same log-softmax formula
        # as the student's so identical logits give an exact zero divergence
        log_pt = Tensor((logits_t.detach() * (1.0 / tau)).log_softmax(axis=-1).data)
        pt = Tensor(np.exp(log_pt.data))
        log_ps = (logits_s * (1.0 / tau)).log_softmax(axis=-1)
    else:
        if logits_t is not None:
            pt = Tensor(p_t.data)
            log_pt = Tensor(logits_t.detach().log_softmax(axis=-1).data)
        else:
            pt = Tensor(p_t.data)
            log_pt = Tensor(np.log(p_t.data))
        log_ps = logits_s.log_softmax(axis=-1) if logits_s is not None else p_s.log()
    kl = (pt * (log_pt - log_ps)).sum(axis=-1).mean()
    return kl * (tau * tau)


def l2e(z_s: Tensor, z_t: Tensor, squared: bool = False) -> Tensor:
    """Mean euclidean distance between unit-normalized embeddings.

    The teacher embedding is treated as constant. ``squared`` switches
    to the squared distance variant.
    """
    if z_s.shape != z_t.shape:
        raise ShapeError(f"l2e: shapes differ {z_s.shape} vs {z_t.shape}")
    norms_s = np.linalg.norm(z_s.data, axis=-1)
    norms_t = np.linalg.norm(z_t.data, axis=-1)
    for name, norms in (("student", norms_s), ("teacher", norms_t)):
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise ValueError(f"l2e: zero-norm {name} embedding at sample index {zero[0]}")
    zs_hat = z_s / z_s.norm(axis=-1, keepdims=True)
    zt_hat = Tensor(z_t.data / norms_t[..., None])
    diff = zs_hat - zt_hat
    dist_sq = (diff * diff).sum(axis=-1)
    return dist_sq.mean() if squared else dist_sq.sqrt().mean()


def _check_alpha_th(alpha_th: float) -> None:
    if not 0.0 <= alpha_th <= 1.0:
        raise ValueError(f"alpha_th must be in [0, 1], got {alpha_th}")


def th_kd_divergence(p_s: Tensor, p_s_th: Tensor, p_t: Tensor, alpha_th: float,
                     tau: float = 1.0) -> Tensor:
    """Blend of the KD divergences of the student's own and teacher-shared heads."""
    _check_alpha_th(alpha_th)
    if alpha_th == 0.0:
        return kd_divergence(p_t, p_s, tau)
    if alpha_th == 1.0:
        return kd_divergence(p_t, p_s_th, tau)
    return (kd_divergence(p_t, p_s, tau) * (1.0 - alpha_th)
            + kd_divergence(p_t, p_s_th, tau) * alpha_th)


def th_kd_cross_entropy(p_s: Tensor, p_s_th: Tensor, y, alpha_th: float) -> Tensor:
    """Blend of the cross-entropies of the student's own and teacher-shared heads."""
    _check_alpha_th(alpha_th)
    if alpha_th == 0.0:
        return cross_entropy(p_s, y)
    if alpha_th == 1.0:
        return cross_entropy(p_s_th, y)
    return (cross_entropy(p_s, y) * (1.0 - alpha_th)
            + cross_entropy(p_s_th, y) * alpha_th)


@dataclass
class LossBreakdown:
    """Scalar loss components of one step; ``node`` carries the graph for backprop."""

    ce: float
    kd: float
    rep: float
    total: float
    node: Optional[Tensor] = None


@dataclass
class LossParts:
    """Everything the combined objective may consume for one batch.

    ``p_s_th``, ``p_t`` and the embedding pair are optional; absent
    terms contribute zero. ``z_t`` is treated as constant.
    """

    p_s: Tensor
    y: object
    p_t: Optional[Tensor] = None
    p_s_th: Optional[Tensor] = None
    z_s: Optional[Tensor] = None
    z_t: Optional[Tensor] = None
    tau: float = 1.0
    squared_l2e: bool = False


def total_loss(parts: LossParts, alpha: float, beta: float, alpha_th: float = 1.0) -> LossBreakdown:
    """Combined objective: blended CE + alpha * blended KD + beta * L2E.

    With no shared aux head the blends reduce to plain CE and KD.
    """
    if alpha < 0 or beta < 0:
        raise ValueError(f"loss weights must be non-negative, got alpha={alpha} beta={beta}")
    _check_alpha_th(alpha_th)

    if parts.p_s_th is not None:
        ce = th_kd_cross_entropy(parts.p_s, parts.p_s_th, parts.y, alpha_th)
    else:
        ce = cross_entropy(parts.p_s, parts.y)

    total = ce
    kd_val = 0.0
    if alpha > 0:
        if parts.p_t is None:
            raise ValueError("total_loss: alpha > 0 requires teacher probabilities")
        if parts.p_s_th is not None:
            kd = th_kd_divergence(parts.p_s, parts.p_s_th, parts.p_t, alpha_th, parts.tau)
        else:
            kd = kd_divergence(parts.p_t, parts.p_s, parts.tau)
        total = total + kd * alpha
        kd_val = kd.item()

    rep_val = 0.0
    if beta > 0:
        if parts.z_s is None or parts.z_t is None:
            raise ValueError("total_loss: beta > 0 requires both embedding tensors")
        rep = l2e(parts.z_s, parts.z_t, squared=parts.squared_l2e)
        total = total + rep * beta
        rep_val = rep.item()

    return LossBreakdown(ce=ce.item(), kd=kd_val, rep=rep_val, total=total.item(), node=total)
