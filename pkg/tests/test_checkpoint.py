import struct

import numpy as np
import pytest

from kdshare.checkpoint import (MAGIC, CheckpointError, config_hash, load_bundle, save_bundle)
from kdshare.models import Architecture, attach_teacher_head, build_bundle, transplant_head

ARCH = Architecture(input_dim=4, hidden=[6, 5], embedding_dim=3, num_classes=3)


def test_roundtrip_restores_all_tensors(tmp_path):
    bundle = build_bundle(ARCH, seed=0)
    path = tmp_path / "m.ckpt"
    save_bundle(str(path), bundle)
    loaded, header = load_bundle(str(path))
    want = dict(bundle.named_parameters())
    got = dict(loaded.named_parameters())
    assert sorted(got) == sorted(want)
    for name in want:
        np.testing.assert_array_equal(got[name].data, want[name].data, err_msg=name)
    assert header["model"]["arch"] == ARCH.to_dict()


def test_save_load_save_byte_identical(tmp_path):
    bundle = build_bundle(ARCH, seed=1, adapter_to=8)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_bundle(str(p1), bundle, provenance={"phase": "i1", "seed": 1})
    loaded, header = load_bundle(str(p1))
    save_bundle(str(p2), loaded, provenance=header["provenance"])
    assert p1.read_bytes() == p2.read_bytes()


def test_trainable_flags_survive(tmp_path):
    bundle = build_bundle(ARCH, seed=2)
    source = build_bundle(ARCH, seed=3)
    transplant_head(bundle, source.head, freeze=True)
    attach_teacher_head(bundle, source.head)
    path = tmp_path / "frozen.ckpt"
    save_bundle(str(path), bundle)
    loaded, _ = load_bundle(str(path))
    assert not loaded.head.layer.W.trainable
    assert not loaded.aux_head.layer.W.trainable
    assert loaded.backbone.layers[0].W.trainable


def test_provenance_preserved(tmp_path):
    bundle = build_bundle(ARCH, seed=4)
    prov = {"config_hash": config_hash({"lr": 0.01}), "phase": "i0"}
    path = tmp_path / "prov.ckpt"
    save_bundle(str(path), bundle, provenance=prov)
    _, header = load_bundle(str(path))
    assert header["provenance"] == prov


def test_config_hash_stable_and_order_independent():
    a = config_hash({"lr": 0.01, "epochs": 30})
    b = config_hash({"epochs": 30, "lr": 0.01})
    assert a == b and len(a) == 16
    assert config_hash({"lr": 0.02, "epochs": 30}) != a


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_bundle(str(path))


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "ver.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 99) + struct.pack("<Q", 2) + b"{}")
    with pytest.raises(CheckpointError, match="version"):
        load_bundle(str(path))


def test_truncated_payload_rejected(tmp_path):
    bundle = build_bundle(ARCH, seed=5)
    path = tmp_path / "trunc.ckpt"
    save_bundle(str(path), bundle)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises((CheckpointError, ValueError)):
        load_bundle(str(path))


def test_trailing_bytes_rejected(tmp_path):
    bundle = build_bundle(ARCH, seed=6)
    path = tmp_path / "trail.ckpt"
    save_bundle(str(path), bundle)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing bytes"):
        load_bundle(str(path))


def test_loaded_bundle_is_functional(tmp_path):
    from kdshare.autodiff import Tensor
    from kdshare.models import bundle_probs

    bundle = build_bundle(ARCH, seed=7)
    path = tmp_path / "fn.ckpt"
    save_bundle(str(path), bundle)
    loaded, _ = load_bundle(str(path))
    x = Tensor(np.random.default_rng(0).standard_normal((5, 4)))
    np.testing.assert_array_equal(bundle_probs(loaded, x).data, bundle_probs(bundle, x).data)
