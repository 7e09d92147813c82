import json
import shutil

import numpy as np
import pytest

from eggfusion.cli import main
from eggfusion.data import load_ground_truth

CONFIG = {
    "paths": {"dataset_root": "data/img", "annotations": "data/ann.json", "output_dir": "out"},
    "split": {"train_frac": 0.5, "val_frac": 0.25, "test_frac": 0.25},
    "synth": {"image_size": 64, "per_class_count": 4, "seed": 0},
    # A low threshold with one box per image keeps the smoke run's output size fixed.
    "detector": {"backbone_id": "tiny", "input_side": 64, "epochs": 2, "learning_rate": 0.002,
                 "score_threshold": 0.0, "max_detections": 1, "pretrained_backbone": False},
    "extractor": {"backend": "tiny", "input_side": 64},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = dict(CONFIG, paths={k: str(root / v) for k, v in CONFIG["paths"].items()})
    (root / "c.json").write_text(json.dumps(cfg))
    args = ["--config", str(root / "c.json")]
    assert main(["synth", *args]) == 0
    assert main(["split", *args]) == 0
    assert main(["train", *args]) == 0
    return root, args


def test_split_manifests(workspace):
    root, args = workspace
    paths = [root / "out" / "splits" / f"{n}.json" for n in ("train", "val", "test")]
    docs = [json.loads(p.read_text()) for p in paths]
    assert [len(d["image_ids"]) for d in docs] == [22, 11, 11]
    assert all(d["format_version"] == 1 and len(d["config_hash"]) == 16 for d in docs)
    before = [p.read_bytes() for p in paths]
    assert main(["split", *args]) == 0
    assert [p.read_bytes() for p in paths] == before


def test_bad_fractions_exit_2(workspace, capsys):
    _, args = workspace
    code = main(["split", *args, "--set", "split.train_frac=0.5", "--set", "split.val_frac=0.5",
                 "--set", "split.test_frac=0.5"])
    assert code == 2
    assert "sum to 1" in capsys.readouterr().err


def test_train_without_manifests_exit_2(tmp_path, capsys):
    code = main(["train", "--set", f"paths.output_dir={tmp_path}", "--set", "detector.backbone_id=tiny"])
    assert code == 2
    assert "eggfusion split" in capsys.readouterr().err


def test_train_outputs(workspace):
    root, _ = workspace
    out = root / "out"
    assert (out / "checkpoints" / "detector" / "weights.pt").exists()
    assert (out / "checkpoints" / "svm" / "svm.npz").exists()
    lines = (out / "logs" / "detector.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2]
    assert "train_accuracy" in json.loads((out / "logs" / "svm.jsonl").read_text())


def test_missing_feature_backbone_is_capability_error(workspace, tmp_path):
    _, args = workspace
    code = main(["train", *args, "--stage", "svm", "--set", "extractor.backend=efficientnet_b7",
                 "--set", f"extractor.weights_path={tmp_path / 'missing.pt'}"])
    assert code == 1


def test_predict_single_image(workspace, tmp_path):
    root, args = workspace
    img = sorted((root / "data" / "img").iterdir())[0]
    out = tmp_path / "p.json"
    assert main(["predict", *args, "--input", str(img), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["predictions"]) == 1 and doc["images"] == [img.name]
    p = doc["predictions"][0]
    assert abs(sum(p["fused_scores"]) - 1) < 1e-6 and p["label_id"] == int(np.argmax(p["fused_scores"]))
    assert doc["config_hash"] and doc["format_version"] == 1


def test_predict_empty_dir(workspace, tmp_path):
    _, args = workspace
    (tmp_path / "empty").mkdir()
    out = tmp_path / "p.json"
    assert main(["predict", *args, "--input", str(tmp_path / "empty"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["predictions"] == []


def test_predict_corrupted_image(workspace, tmp_path):
    root, args = workspace
    d = tmp_path / "imgs"
    d.mkdir()
    for src in sorted((root / "data" / "img").iterdir())[:9]:
        shutil.copy(src, d / src.name)
    (d / "zz_broken.png").write_bytes(b"\x89PNG garbage")
    out = tmp_path / "p.json"
    assert main(["predict", *args, "--input", str(d), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["predictions"]) == 9
    assert [e["image_id"] for e in doc["errors"]] == ["zz_broken.png"]
    assert main(["predict", *args, "--input", str(d), "--out", str(out), "--strict"]) == 1


def _gt_predictions(ann, ids, path):
    gt = load_ground_truth(ann)
    preds = []
    for i in ids:
        for box, label in gt[i]:
            s = [0.0] * 11
            s[label] = 1.0
            preds.append({"image_id": i, "bbox": box.as_list(), "label_id": label, "label_name": "",
                          "confidence": 1.0, "fused_scores": s, "det_scores": s, "svm_scores": s})
    path.write_text(json.dumps({"format_version": 1, "images": ids, "predictions": preds}))


def test_evaluate_perfect_predictions(workspace, tmp_path):
    root, args = workspace
    ids = json.loads((root / "out" / "splits" / "test.json").read_text())["image_ids"]
    _gt_predictions(root / "data" / "ann.json", ids, tmp_path / "p.json")
    assert main(["evaluate", *args, "--predictions", str(tmp_path / "p.json"), "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert rep["accuracy"] == 1.0 and rep["misdetections"] == 0 and rep["matched"] == len(ids)
    assert rep["views"]["svm"]["accuracy"] == 1.0
    for name in ("iou_hist.png", "confidence_hist.png", "confusion_matrix.png", "confusion.csv"):
        assert (tmp_path / "ev" / name).exists()


def test_evaluate_unknown_image_ids(workspace, tmp_path, capsys):
    root, args = workspace
    _gt_predictions(root / "data" / "ann.json", [], tmp_path / "p.json")
    doc = json.loads((tmp_path / "p.json").read_text())
    doc["images"] = ["nope_1.png", "nope_2.png"]
    (tmp_path / "p.json").write_text(json.dumps(doc))
    assert main(["evaluate", *args, "--predictions", str(tmp_path / "p.json"), "--out", str(tmp_path / "ev")]) == 2
    err = capsys.readouterr().err
    assert "nope_1.png" in err and "nope_2.png" in err


def test_full_run_is_deterministic(workspace, tmp_path):
    root, args = workspace
    out = tmp_path / "run"
    rels = ("splits/train.json", "splits/test.json", "logs/detector.jsonl", "logs/svm.jsonl",
            "predictions.json", "eval/report.json")
    snapshots = []
    # Same config (and so the same config hash) both times, into the same directory.
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        for cmd in ("split", "train", "predict", "evaluate"):
            assert main([cmd, *args, "--set", f"paths.output_dir={out}", "--seed", "3"]) == 0
        snapshots.append({rel: (out / rel).read_bytes() for rel in rels})
    for rel in rels:
        assert snapshots[0][rel] == snapshots[1][rel], rel
