import json

import numpy as np

from kdshare.checkpoint import load_bundle
from kdshare.cli import main
from kdshare.data import load_csv

DATASET = {"kind": "gaussian_blobs", "num_classes": 3, "dim": 4,
           "samples_per_class": 40, "noise_std": 0.5, "seed": 11}
STUDENT_ARCH = {"input_dim": 4, "hidden": [8], "embedding_dim": 6, "num_classes": 3}
TEACHER_ARCH = {"input_dim": 4, "hidden": [16, 16], "embedding_dim": 12, "num_classes": 3}
VANILLA = {"mode": "vanilla", "epochs": 3, "lr": 0.01, "batch_size": 32, "seed": 0}


def write_json(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def train_config(tmp_path, **overrides):
    cfg = {"dataset": DATASET, "student_arch": STUDENT_ARCH, "train": dict(VANILLA)}
    cfg["train"].update(overrides.pop("train", {}))
    cfg.update(overrides)
    return cfg


# -- gen-data -------------------------------------------------------------


def test_gen_data_writes_deterministic_csv(tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = write_json(tmp_path, "d.json", {"dataset": DATASET})
    assert main(["gen-data", cfg, "--out", str(out1)]) == 0
    assert main(["gen-data", cfg, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    data = load_csv(str(out1))
    assert data.features.shape == (120, 4)
    assert data.num_classes == 3


def test_gen_data_flags_and_seed_override(tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    flags = ["--kind", "concentric_rings", "--num-classes", "2", "--dim", "3",
             "--samples-per-class", "10", "--noise-std", "0.1"]
    assert main(["gen-data", *flags, "--seed", "1", "--out", str(out1)]) == 0
    assert main(["gen-data", *flags, "--seed", "2", "--out", str(out2)]) == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_gen_data_invalid_kind_exits_1(tmp_path, capsys):
    cfg = write_json(tmp_path, "bad.json", {"dataset": {**DATASET, "kind": "nope"}})
    assert main(["gen-data", cfg, "--out", str(tmp_path / "x.csv")]) == 1
    assert "config error" in capsys.readouterr().err


# -- train ----------------------------------------------------------------


def test_train_vanilla_outputs_and_rerun_identical(tmp_path):
    cfg = write_json(tmp_path, "t.json", train_config(tmp_path, train={"epochs": 10}))
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", cfg, "--out", str(out1)]) == 0
    assert main(["train", cfg, "--out", str(out2)]) == 0
    report = (out1 / "report.csv").read_bytes()
    assert report == (out2 / "report.csv").read_bytes()
    assert (out1 / "student.ckpt").read_bytes() == (out2 / "student.ckpt").read_bytes()
    last = report.decode().strip().splitlines()[-1].split(",")
    assert float(last[6]) > 0.9  # test_acc column


def test_train_multi_seed_writes_tagged_outputs(tmp_path):
    cfg = train_config(tmp_path)
    cfg["seeds"] = [0, 1]
    path = write_json(tmp_path, "m.json", cfg)
    out = tmp_path / "multi"
    assert main(["train", path, "--out", str(out)]) == 0
    assert (out / "report_seed0.csv").exists() and (out / "report_seed1.csv").exists()
    assert (out / "student_seed0.ckpt").read_bytes() != (out / "student_seed1.ckpt").read_bytes()


def test_train_distill_without_teacher_lists_all_problems(tmp_path, capsys):
    cfg = train_config(tmp_path, train={"mode": "th_kd", "alpha": -1.0})
    path = write_json(tmp_path, "bad.json", cfg)
    assert main(["train", path]) == 1
    err = capsys.readouterr().err
    assert "teacher_checkpoint" in err
    assert "alpha" in err


def test_train_vanilla_rejects_teacher(tmp_path, capsys):
    cfg = train_config(tmp_path)
    cfg["teacher_checkpoint"] = "whatever.ckpt"
    path = write_json(tmp_path, "bad.json", cfg)
    assert main(["train", path]) == 1
    assert "not allowed for vanilla" in capsys.readouterr().err


def test_train_unknown_field_rejected(tmp_path, capsys):
    cfg = train_config(tmp_path, train={"learning_rate": 0.1})
    path = write_json(tmp_path, "bad.json", cfg)
    assert main(["train", path]) == 1
    assert "unknown fields" in capsys.readouterr().err


def test_train_kd_with_teacher_checkpoint(tmp_path):
    teacher_cfg = write_json(tmp_path, "teacher.json",
                             train_config(tmp_path, train={"epochs": 10}))
    tdir = tmp_path / "teacher"
    assert main(["train", teacher_cfg, "--out", str(tdir)]) == 0
    kd = train_config(tmp_path, train={"mode": "kd", "alpha": 1.0, "epochs": 3})
    kd["teacher_checkpoint"] = str(tdir / "student.ckpt")
    path = write_json(tmp_path, "kd.json", kd)
    out = tmp_path / "kd"
    assert main(["train", path, "--out", str(out)]) == 0
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == ("epoch,ce,kd,rep,total,train_acc,test_acc,"
                      "mean_angle_rad,mean_angle_deg,msc")


# -- shkd -----------------------------------------------------------------


def shkd_config():
    return {
        "dataset": DATASET,
        "student_arch": STUDENT_ARCH,
        "teacher_arch": TEACHER_ARCH,
        "phases": {
            "i0": dict(VANILLA),
            "i1": {**VANILLA, "seed": 1},
            "i2": {**VANILLA, "mode": "l2e", "alpha": 1.0, "beta": 1.0},
        },
    }


def test_shkd_writes_phases_and_summary(tmp_path):
    path = write_json(tmp_path, "s.json", shkd_config())
    out = tmp_path / "shkd"
    assert main(["shkd", path, "--out", str(out)]) == 0
    for tag in ("i0", "i1", "i2"):
        assert (out / f"shkd_{tag}.ckpt").exists()
        assert (out / f"report_{tag}.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["head_chain_ok"] is True
    # the transplanted classifier is byte-equal across all three phases
    heads = []
    for tag in ("i0", "i1", "i2"):
        bundle, _ = load_bundle(str(out / f"shkd_{tag}.ckpt"))
        heads.append(bundle.head.layer.W.data)
    np.testing.assert_array_equal(heads[0], heads[1])
    np.testing.assert_array_equal(heads[0], heads[2])


def test_shkd_zero_epochs_keeps_chain(tmp_path):
    cfg = shkd_config()
    for phase in cfg["phases"].values():
        phase["epochs"] = 0
    path = write_json(tmp_path, "s0.json", cfg)
    out = tmp_path / "shkd0"
    assert main(["shkd", path, "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["head_chain_ok"] is True


def test_shkd_missing_phase_exits_1(tmp_path, capsys):
    cfg = shkd_config()
    del cfg["phases"]["i1"]
    path = write_json(tmp_path, "bad.json", cfg)
    assert main(["shkd", path]) == 1
    assert "i1" in capsys.readouterr().err


# -- analyze ----------------------------------------------------------------


def test_analyze_self_comparison(tmp_path):
    cfg = write_json(tmp_path, "t.json", train_config(tmp_path))
    tdir = tmp_path / "m"
    assert main(["train", cfg, "--out", str(tdir)]) == 0
    data_csv = tmp_path / "d.csv"
    assert main(["gen-data", write_json(tmp_path, "d.json", {"dataset": DATASET}),
                 "--out", str(data_csv)]) == 0
    out = tmp_path / "an"
    ckpt = str(tdir / "student.ckpt")
    assert main(["analyze", ckpt, ckpt, str(data_csv), "--out", str(out)]) == 0
    rows = (out / "analysis.csv").read_text().splitlines()
    vals = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert float(vals["mean_angle_rad"]) < 1e-6
    assert vals["student_msc"] == vals["teacher_msc"]
    per_sample = (out / "per_sample_angles.csv").read_text().splitlines()
    assert per_sample[0] == "index,angle_rad,angle_deg"
    assert len(per_sample) > 1


def test_analyze_missing_checkpoint_exits_1(tmp_path, capsys):
    data_csv = tmp_path / "d.csv"
    assert main(["gen-data", write_json(tmp_path, "d.json", {"dataset": DATASET}),
                 "--out", str(data_csv)]) == 0
    assert main(["analyze", "missing.ckpt", "missing.ckpt", str(data_csv)]) == 1
    assert "teacher" in capsys.readouterr().err


# -- ablate ------------------------------------------------------------------


def test_ablate_writes_row_per_arch(tmp_path):
    cfg = shkd_config()
    cfg["final_student_arch"] = STUDENT_ARCH
    cfg["initial_student_archs"] = [
        {"input_dim": 4, "hidden": [2], "embedding_dim": 6, "num_classes": 3},
        STUDENT_ARCH,
    ]
    for phase in cfg["phases"].values():
        phase["epochs"] = 2
    path = write_json(tmp_path, "a.json", cfg)
    out = tmp_path / "ab"
    assert main(["ablate", path, "--out", str(out)]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "initial_arch,teacher_test_acc,final_student_test_acc"
    assert len(lines) == 3


def test_invalid_json_exits_1(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["train", str(path)]) == 1
    assert "not valid JSON" in capsys.readouterr().err
