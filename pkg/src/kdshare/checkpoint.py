"""Framed binary checkpoints for model bundles.

Layout (little-endian throughout):

    magic   4 bytes  b"SHKD"
    version u32      format version (currently 1)
    hlen    u64      byte length of the JSON header
    header  hlen bytes, canonical JSON (sorted keys, no whitespace)
    data    concatenated row-major float64 tensor payloads, in the
            order the header's "tensors" list declares them

The header records the architecture, adapter/aux-head presence, a
provenance block (config hash, phase tag) and per-tensor name, shape
and trainable flag. Canonical JSON plus raw float64 bytes make
save -> load -> save byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional

import numpy as np

from .models import (Architecture, ClassifierHead, DimensionAdapter, LinearLayer, MlpBackbone,
                     ModelBundle)

MAGIC = b"SHKD"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


def config_hash(config_dict: dict) -> str:
    """Stable hash of a JSON-serializable config."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _describe(bundle: ModelBundle) -> dict:
    desc = {"arch": bundle.arch.to_dict(),
            "has_aux_head": bundle.aux_head is not None}
    if bundle.adapter is not None:
        if bundle.adapter.is_identity:
            desc["adapter"] = "identity"
        else:
            desc["adapter"] = {"in_dim": bundle.adapter.layer.in_dim,
                               "out_dim": bundle.adapter.layer.out_dim}
    else:
        desc["adapter"] = None
    if bundle.head.embedding_dim != bundle.arch.embedding_dim:
        desc["head_in_dim"] = bundle.head.embedding_dim
    if bundle.aux_head is not None:
        desc["aux_head_in_dim"] = bundle.aux_head.embedding_dim
    return desc


def save_bundle(path: str, bundle: ModelBundle, provenance: Optional[dict] = None) -> None:
    tensors = bundle.named_parameters()
    header = {
        "model": _describe(bundle),
        "provenance": provenance or {},
        "tensors": [{"name": name, "shape": list(t.shape), "trainable": t.trainable}
                    for name, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_bundle(path: str):
    """Reconstruct a bundle; returns (bundle, header_dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())

    values = {}
    offset = 16 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        values[entry["name"]] = (arr, bool(entry["trainable"]))
        offset += count * 8
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes ({len(raw) - offset}) after tensor data")

    bundle = _rebuild(header["model"], values, path)
    return bundle, header


def _layer(values: dict, prefix: str, path: str) -> LinearLayer:
    try:
        W, w_train = values[f"{prefix}.W"]
        b, _ = values[f"{prefix}.b"]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from None
    return LinearLayer(W, b, trainable=w_train)


def _rebuild(desc: dict, values: dict, path: str) -> ModelBundle:
    arch = Architecture.from_dict(desc["arch"])
    n_layers = len(arch.hidden) + 1
    backbone = MlpBackbone([_layer(values, f"backbone.{i}", path) for i in range(n_layers)])
    if backbone.input_dim != arch.input_dim or backbone.embedding_dim != arch.embedding_dim:
        raise CheckpointError(
            f"{path}: tensor shapes disagree with declared architecture "
            f"{desc['arch']} (backbone is {backbone.input_dim}->{backbone.embedding_dim})")
    head = ClassifierHead(_layer(values, "head", path))

    adapter = None
    if desc.get("adapter") == "identity":
        adapter = DimensionAdapter(None, identity_if_equal=True)
    elif isinstance(desc.get("adapter"), dict):
        adapter = DimensionAdapter(_layer(values, "adapter", path))

    bundle = ModelBundle(backbone=backbone, head=head, arch=arch, adapter=adapter)
    if desc.get("has_aux_head"):
        aux = ClassifierHead(_layer(values, "aux_head", path))
        aux.layer.set_trainable(False)
        bundle.aux_head = aux
    return bundle
