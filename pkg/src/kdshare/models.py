"""MLP backbones, classifier heads, dimension adapters and head sharing.

A model is a ``ModelBundle``: a backbone mapping inputs to embeddings,
a linear classifier head on top, an optional linear adapter that maps
the bundle's embeddings into another model's embedding width, and an
optional frozen auxiliary head (the teacher-head-sharing mechanism).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import ShapeError, Tensor
from .rng import STREAM_INIT, stream


@dataclass
class Architecture:
    """Widths of an MLP classifier: input -> hidden... -> embedding -> classes."""

    input_dim: int
    hidden: list
    embedding_dim: int
    num_classes: int

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "embedding_dim": self.embedding_dim, "num_classes": self.num_classes}

    @staticmethod
    def from_dict(d: dict) -> "Architecture":
        return Architecture(input_dim=int(d["input_dim"]), hidden=[int(h) for h in d["hidden"]],
                            embedding_dim=int(d["embedding_dim"]), num_classes=int(d["num_classes"]))


class LinearLayer:
    """y = x W^T + b with W of shape [out_dim, in_dim]."""

    def __init__(self, W, b, trainable: bool = True):
        # Accepts arrays (fresh leaves) or Tensors (e.g. graph nodes in
        # gradient checks).
        self.W = W if isinstance(W, Tensor) else Tensor(W, trainable=trainable)
        self.b = b if isinstance(b, Tensor) else Tensor(b, trainable=trainable)

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def trainable(self) -> bool:
        return self.W.trainable

    def set_trainable(self, flag: bool) -> None:
        self.W.set_trainable(flag)
        self.b.set_trainable(flag)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear: input width {x.shape[-1]} != layer in_dim {self.in_dim}")
        return x.matmul(self.W.T) + self.b

    def clone(self) -> "LinearLayer":
        return LinearLayer(self.W.data.copy(), self.b.data.copy(), trainable=self.trainable)

    @staticmethod
    def init(in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        # Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
        bound = 1.0 / np.sqrt(in_dim)
        W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=(out_dim,))
        return LinearLayer(W, b)


class MlpBackbone:
    """Stack of linear layers with relu between them; no activation on the output."""

    def __init__(self, layers: list):
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x: Tensor) -> Tensor:
        z = x
        for i, layer in enumerate(self.layers):
            z = layer(z)
            if i < len(self.layers) - 1:
                z = z.relu()
        return z

    def clone(self) -> "MlpBackbone":
        return MlpBackbone([layer.clone() for layer in self.layers])


class ClassifierHead:
    """Linear map from embeddings to class logits."""

    def __init__(self, layer: LinearLayer):
        self.layer = layer

    @property
    def num_classes(self) -> int:
        return self.layer.out_dim

    @property
    def embedding_dim(self) -> int:
        return self.layer.in_dim

    def logits(self, z: Tensor) -> Tensor:
        return self.layer(z)

    def clone(self) -> "ClassifierHead":
        return ClassifierHead(self.layer.clone())


class DimensionAdapter:
    """Linear map reconciling two embedding widths.

    With equal widths and ``identity_if_equal`` the adapter is a literal
    pass-through (bitwise identity), not a learned identity matrix.
    """

    def __init__(self, layer: Optional[LinearLayer], identity_if_equal: bool = True):
        self.layer = layer
        self.identity_if_equal = identity_if_equal

    @property
    def is_identity(self) -> bool:
        return self.layer is None

    def __call__(self, z: Tensor) -> Tensor:
        if self.layer is None:
            return z
        return self.layer(z)

    def clone(self) -> "DimensionAdapter":
        return DimensionAdapter(None if self.layer is None else self.layer.clone(),
                                self.identity_if_equal)

    @staticmethod
    def create(from_dim: int, to_dim: int, rng: np.random.Generator,
               identity_if_equal: bool = True) -> "DimensionAdapter":
        if from_dim == to_dim and identity_if_equal:
            return DimensionAdapter(None, identity_if_equal=True)
        return DimensionAdapter(LinearLayer.init(from_dim, to_dim, rng), identity_if_equal)


@dataclass
class ModelBundle:
    """Backbone + head, optional adapter and frozen auxiliary head."""

    backbone: MlpBackbone
    head: ClassifierHead
    arch: Architecture
    adapter: Optional[DimensionAdapter] = None
    aux_head: Optional[ClassifierHead] = None

    @property
    def embedding_dim(self) -> int:
        return self.backbone.embedding_dim

    def adapted_dim(self) -> int:
        if self.adapter is not None and not self.adapter.is_identity:
            return self.adapter.layer.out_dim
        return self.embedding_dim

    def named_parameters(self) -> list:
        """(name, Tensor) pairs in a stable order."""
        params = []
        for i, layer in enumerate(self.backbone.layers):
            params.append((f"backbone.{i}.W", layer.W))
            params.append((f"backbone.{i}.b", layer.b))
        params.append(("head.W", self.head.layer.W))
        params.append(("head.b", self.head.layer.b))
        if self.adapter is not None and not self.adapter.is_identity:
            params.append(("adapter.W", self.adapter.layer.W))
            params.append(("adapter.b", self.adapter.layer.b))
        if self.aux_head is not None:
            params.append(("aux_head.W", self.aux_head.layer.W))
            params.append(("aux_head.b", self.aux_head.layer.b))
        return params

    def trainable_parameters(self) -> list:
        return [t for _, t in self.named_parameters() if t.trainable]

    def clone(self) -> "ModelBundle":
        return ModelBundle(
            backbone=self.backbone.clone(),
            head=self.head.clone(),
            arch=copy.deepcopy(self.arch),
            adapter=None if self.adapter is None else self.adapter.clone(),
            aux_head=None if self.aux_head is None else self.aux_head.clone(),
        )


def build_bundle(arch: Architecture, seed: int, adapter_to: Optional[int] = None) -> ModelBundle:
    """Fresh bundle with seeded initialization.

    ``adapter_to`` attaches a linear adapter from the bundle's embedding
    width to the given width (identity pass-through when equal).
    """
    rng = stream(seed, STREAM_INIT)
    widths = [arch.input_dim] + list(arch.hidden) + [arch.embedding_dim]
    layers = [LinearLayer.init(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]
    head = ClassifierHead(LinearLayer.init(arch.embedding_dim, arch.num_classes, rng))
    adapter = None
    if adapter_to is not None:
        adapter = DimensionAdapter.create(arch.embedding_dim, adapter_to, rng)
    return ModelBundle(backbone=MlpBackbone(layers), head=head, arch=arch, adapter=adapter)


def embed(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Backbone embedding z for a [batch, input_dim] tensor."""
    if x.shape[-1] != bundle.backbone.input_dim:
        raise ShapeError(
            f"embed: input width {x.shape[-1]} != backbone input {bundle.backbone.input_dim}")
    return bundle.backbone(x)


def adapted_embed(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Embedding after the bundle's adapter (identity when absent)."""
    z = embed(bundle, x)
    if bundle.adapter is not None:
        z = bundle.adapter(z)
    return z


def predict(head: ClassifierHead, z: Tensor) -> Tensor:
    """Softmax probabilities of the head's logits."""
    return head.logits(z).softmax(axis=-1)


def head_input(bundle: ModelBundle, head: ClassifierHead, z_raw: Tensor,
               z_adapted: Optional[Tensor]) -> Tensor:
    """Pick the embedding a head consumes: raw if widths match, else adapted."""
    if head.embedding_dim == z_raw.shape[-1]:
        return z_raw
    if z_adapted is not None and head.embedding_dim == z_adapted.shape[-1]:
        return z_adapted
    raise ShapeError(
        f"head expects width {head.embedding_dim}; bundle provides "
        f"{z_raw.shape[-1]} raw / {None if z_adapted is None else z_adapted.shape[-1]} adapted")


def bundle_probs(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Main-head softmax probabilities for raw inputs."""
    z = embed(bundle, x)
    z_ad = bundle.adapter(z) if bundle.adapter is not None else None
    return predict(bundle.head, head_input(bundle, bundle.head, z, z_ad))


def _head_compatible(bundle: ModelBundle, head: ClassifierHead) -> bool:
    return head.embedding_dim in (bundle.embedding_dim, bundle.adapted_dim())


def attach_teacher_head(student: ModelBundle, teacher_head: ClassifierHead) -> ModelBundle:
    """Attach a frozen deep copy of the teacher's classifier as the auxiliary head.

    The aux head must fit either the student's raw embedding width or
    the width after the student's adapter. Calling again replaces the
    previous aux head.
    """
    if not _head_compatible(student, teacher_head):
        raise ShapeError(
            f"attach_teacher_head: head expects width {teacher_head.embedding_dim}, "
            f"student provides {student.embedding_dim} raw / {student.adapted_dim()} adapted")
    aux = teacher_head.clone()
    aux.layer.set_trainable(False)
    student.aux_head = aux
    return student


def transplant_head(target: ModelBundle, source_head: ClassifierHead, freeze: bool) -> ModelBundle:
    """Replace the target's main head with a copy of ``source_head``.

    The copy is frozen when ``freeze`` is set. The head must fit the
    target's raw or adapted embedding width.
    """
    if not _head_compatible(target, source_head):
        raise ShapeError(
            f"transplant_head: head expects width {source_head.embedding_dim}, "
            f"target provides {target.embedding_dim} raw / {target.adapted_dim()} adapted")
    new_head = source_head.clone()
    new_head.layer.set_trainable(not freeze)
    target.head = new_head
    return target
