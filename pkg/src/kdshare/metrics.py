"""Representation-quality diagnostics: embedding angles, MSC, accuracy.

These are pure numpy evaluations (no gradients); model evaluation
helpers pull embeddings through the bundles in inference mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .models import ModelBundle, adapted_embed, bundle_probs


@dataclass
class EmbeddingSet:
    """Vectors [N, d] with integer class labels [N]."""

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.shape[0] != self.labels.shape[0]:
            raise ValueError(f"EmbeddingSet: {self.vectors.shape[0]} vectors but "
                             f"{self.labels.shape[0]} labels")
        if self.vectors.shape[0] < 1:
            raise ValueError("EmbeddingSet: need at least one sample")


def embedding_angle(z_t: np.ndarray, z_s: np.ndarray) -> float:
    """Angle in radians between two embedding vectors.

    Computed as 2*atan2(|u - v|, |u + v|) on the unit-normalized
    vectors, which stays accurate near 0 and pi where arccos of a
    rounded cosine loses up to half the significant digits.
    """
    z_t = np.asarray(z_t, dtype=np.float64).reshape(1, -1)
    z_s = np.asarray(z_s, dtype=np.float64).reshape(1, -1)
    try:
        return float(pairwise_angles(z_t, z_s)[0])
    except ValueError:
        raise ValueError("embedding_angle: zero-norm vector") from None


def pairwise_angles(z_t: np.ndarray, z_s: np.ndarray) -> np.ndarray:
    """Per-row angles for two [N, d] embedding matrices."""
    z_t = np.asarray(z_t, dtype=np.float64)
    z_s = np.asarray(z_s, dtype=np.float64)
    nt = np.linalg.norm(z_t, axis=1)
    ns = np.linalg.norm(z_s, axis=1)
    bad = np.nonzero((nt == 0.0) | (ns == 0.0))[0]
    if bad.size:
        raise ValueError(f"pairwise_angles: zero-norm embedding at sample index {bad[0]}")
    u = z_t / nt[:, None]
    v = z_s / ns[:, None]
    return 2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))


def comparison_embeddings(teacher: ModelBundle, student: ModelBundle, features: np.ndarray):
    """Teacher/student embeddings in a common width.

    Preference order: both raw, then teacher raw vs student adapted,
    then teacher adapted vs student raw, then both adapted. An adapter
    on one side must reconcile differing widths.
    """
    from .models import embed  # local import to avoid cycle noise

    x = Tensor(features)
    zt_raw = embed(teacher, x).data
    zs_raw = embed(student, x).data
    zt_ad = adapted_embed(teacher, x).data if teacher.adapter is not None else None
    zs_ad = adapted_embed(student, x).data if student.adapter is not None else None
    for zt, zs in ((zt_raw, zs_raw), (zt_raw, zs_ad), (zt_ad, zs_raw), (zt_ad, zs_ad)):
        if zt is not None and zs is not None and zt.shape == zs.shape:
            return zt, zs
    raise ValueError(f"no matching embedding widths: teacher {zt_raw.shape[-1]} raw"
                     f"{'' if zt_ad is None else f'/{zt_ad.shape[-1]} adapted'}, "
                     f"student {zs_raw.shape[-1]} raw"
                     f"{'' if zs_ad is None else f'/{zs_ad.shape[-1]} adapted'}")


def mean_angle(teacher: ModelBundle, student: ModelBundle, features: np.ndarray) -> float:
    """Mean teacher-student embedding angle over the given samples.

    Embeddings are compared in a common width (see
    ``comparison_embeddings``); an adapter must reconcile differing
    widths.
    """
    z_t, z_s = comparison_embeddings(teacher, student, features)
    return float(pairwise_angles(z_t, z_s).mean())


def msc_score(embeddings: EmbeddingSet) -> float:
    """Mean silhouette-style clustering score in [-1, 1].

    Per sample z: sigma = mean distance to the other same-class vectors
    (0 for a singleton class), delta = minimum distance to the centroids
    of the other classes, contribution (delta - sigma) / max(delta, sigma)
    with 0/0 defined as 0.
    """
    vectors, labels = embeddings.vectors, embeddings.labels
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("msc_score: need at least two distinct classes")
    centroids = {c: vectors[labels == c].mean(axis=0) for c in classes}

    scores = np.empty(vectors.shape[0])
    for i in range(vectors.shape[0]):
        z = vectors[i]
        same = vectors[(labels == labels[i])]
        if same.shape[0] <= 1:
            sigma = 0.0
        else:
            d = np.linalg.norm(same - z, axis=1)
            sigma = (d.sum()) / (same.shape[0] - 1)  # excludes z itself (distance 0)
        delta = min(np.linalg.norm(z - centroids[c]) for c in classes if c != labels[i])
        denom = max(delta, sigma)
        scores[i] = 0.0 if denom == 0.0 else (delta - sigma) / denom
    return float(scores.mean())


def accuracy(p: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest index."""
    p = np.asarray(p)
    labels = np.asarray(labels)
    if p.shape[0] < 1:
        raise ValueError("accuracy: need at least one sample")
    return float((p.argmax(axis=1) == labels).mean())


def model_accuracy(bundle: ModelBundle, features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of the bundle's main head on raw features."""
    return accuracy(bundle_probs(bundle, Tensor(features)).data, labels)


def model_msc(bundle: ModelBundle, features: np.ndarray, labels: np.ndarray) -> float:
    """MSC of the bundle's raw backbone embeddings."""
    from .models import embed  # local import to avoid cycle noise

    z = embed(bundle, Tensor(features)).data
    return msc_score(EmbeddingSet(z, labels))
