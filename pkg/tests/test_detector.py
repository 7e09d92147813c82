import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eggfusion.boxes import BoundingBox, iou
from eggfusion.config import DetectorConfig, SynthConfig
from eggfusion.detector import Detection, DetectorModel, available_backends, create_backend, detect, nms, train_detector
from eggfusion.errors import CapabilityError, ConfigError
from eggfusion.scores import SIMPLEX_TOL
from eggfusion.synth import synth_generate

K = 11


def d(box, conf):
    s = np.full(K, (1 - conf) / (K - 1))
    s[0] = conf
    return Detection(BoundingBox(*box), tuple(s), conf)


def test_nms_worked_example():
    a = d((0, 0, 10, 10), 0.9)
    b = d((0, 0, 10, 8), 0.8)  # IOU(A,B) = 0.8
    c = d((9, 0, 19, 10), 0.7)
    assert iou(a.box, b.box) == pytest.approx(0.8)
    assert nms([a, b, c], 0.5) == [a, c]


def test_nms_threshold_is_strict():
    a, b = d((0, 0, 10, 10), 0.9), d((0, 0, 10, 5), 0.8)  # IOU exactly 0.5
    assert nms([a, b], 0.5) == [a, b]


@st.composite
def candidate_lists(draw):
    n = draw(st.integers(0, 12))
    out = []
    for _ in range(n):
        x, y = draw(st.integers(0, 50)), draw(st.integers(0, 50))
        w, h = draw(st.integers(1, 30)), draw(st.integers(1, 30))
        out.append(d((x, y, x + w, y + h), draw(st.floats(0.1, 1.0))))
    return sorted(out, key=lambda t: -t.confidence)


@given(candidate_lists(), st.floats(0.0, 1.0))
def test_nms_properties(cands, thr):
    kept = nms(cands, thr)
    assert all(k in cands for k in kept)
    assert nms(kept, thr) == kept
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert iou(a.box, b.box) <= thr
    if cands:
        assert kept[0] == cands[0]


def test_unknown_backend():
    assert {"tiny", "efficientdetv2"} <= set(available_backends())
    with pytest.raises(CapabilityError):
        create_backend(DetectorConfig(backbone_id="yolo"), 0)


def test_empty_training_set():
    with pytest.raises(ConfigError):
        train_detector([], [], DetectorConfig(backbone_id="tiny", input_side=64, epochs=1))


@pytest.fixture(scope="module")
def tiny_model():
    data = synth_generate(SynthConfig(image_size=64, per_class_count=2, seed=0))
    cfg = DetectorConfig(backbone_id="tiny", input_side=64, epochs=3, batch_size=4, learning_rate=2e-3, score_threshold=0.05)
    return train_detector(data, data[:4], cfg, seed=0), data


def test_training_log_and_loss_decreases(tiny_model):
    model, _ = tiny_model
    log = model.training_log
    assert [r["epoch"] for r in log] == [1, 2, 3]
    assert all(np.isfinite(r["loss"]) and np.isfinite(r["val_loss"]) for r in log)
    assert log[-1]["loss"] < log[0]["loss"]


def test_detections_well_formed(tiny_model):
    model, data = tiny_model
    for img in data[:5]:
        dets = detect(model, img)
        assert [x.confidence for x in dets] == sorted((x.confidence for x in dets), reverse=True)
        for x in dets:
            assert abs(sum(x.scores) - 1) < SIMPLEX_TOL and x.confidence == max(x.scores)
            assert 0 <= x.box.xmin < x.box.xmax <= 64 and 0 <= x.box.ymin < x.box.ymax <= 64


def test_seeded_training_is_reproducible(tiny_model):
    model, data = tiny_model
    again = train_detector(data, data[:4], model.config, seed=0)
    assert again.training_log == model.training_log


def test_checkpoint_round_trip(tiny_model, tmp_path):
    model, data = tiny_model
    model.save(tmp_path / "det")
    manifest = json.loads((tmp_path / "det" / "manifest.json").read_text())
    assert manifest["format_version"] == 1 and manifest["deterministic"]
    back = DetectorModel.load(tmp_path / "det")
    for img in data[:5]:
        assert detect(back, img) == detect(model, img)


def test_efficientdet_backend_contract():
    pytest.importorskip("effdet")
    cfg = DetectorConfig(input_side=128, pretrained_backbone=False, score_threshold=0.0)
    backend = create_backend(cfg, 0)
    pixels = np.random.default_rng(0).normal(size=(128, 128, 3)).astype(np.float32)
    target = (np.array([[10, 10, 60, 50]], np.float32), np.array([3]))
    # Batch of two: at 128 px the coarsest level is 1x1 and batch norm needs >1 value.
    loss = backend.train_step(np.stack([pixels, pixels]), [target, target])
    assert np.isfinite(loss)
    boxes, gate, probs = backend.predict_raw(pixels)
    assert boxes.shape[1] == 4 and probs.shape == (len(boxes), K) and gate.shape == (len(boxes),)
