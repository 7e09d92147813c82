import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from eggfusion.boxes import BoundingBox
from eggfusion.categories import CATEGORY_NAMES, NUM_CLASSES, category_id
from eggfusion.config import SplitSpec
from eggfusion.data import (
    AnnotatedImage,
    Annotation,
    crop_box,
    load_dataset,
    load_ground_truth,
    preprocess_for_classifier,
    preprocess_for_detector,
    split_counts,
    split_dataset,
    to_rgb,
)
from eggfusion.errors import ConfigError, ContractError, LoadError, SchemaError


def write_fixture(tmp_path, records, sizes=None, categories=None):
    images = []
    for i, name in enumerate(sorted({r[0] for r in records})):
        w, h = (sizes or {}).get(name, (64, 48))
        Image.fromarray(np.full((h, w, 3), 128, np.uint8)).save(tmp_path / name)
        images.append({"id": i, "file_name": name, "width": w, "height": h})
    ids = {im["file_name"]: im["id"] for im in images}
    anns = [{"id": j, "image_id": ids[n], "bbox": b, "category_id": c} for j, (n, b, c) in enumerate(records)]
    cats = categories or [{"id": i, "name": n} for i, n in enumerate(CATEGORY_NAMES)]
    path = tmp_path / "ann.json"
    path.write_text(json.dumps({"images": images, "annotations": anns, "categories": cats}))
    return path


def test_category_order_and_aliases():
    assert len(CATEGORY_NAMES) == NUM_CLASSES == 11
    assert category_id(CATEGORY_NAMES[0]) == 0
    assert category_id(CATEGORY_NAMES[10]) == 10
    with pytest.raises(KeyError):
        category_id("Plasmodium falciparum")


def test_load_single_egg(tmp_path):
    ann = write_fixture(tmp_path, [("a.png", [10, 5, 20, 30], 6)])
    (img,) = load_dataset(tmp_path, ann)
    assert img.image_id == "a.png"
    assert img.annotations == (Annotation(BoundingBox(10, 5, 30, 35), 6),)
    assert img.pixels.shape == (48, 64, 3) and img.pixels.dtype == np.uint8
    assert load_ground_truth(ann) == {"a.png": [(BoundingBox(10, 5, 30, 35), 6)]}


def test_degenerate_box_skipped_with_warning(tmp_path):
    ann = write_fixture(tmp_path, [("a.png", [10, 5, 0, 30], 1), ("a.png", [1, 1, 5, 5], 2), ("b.png", [1, 1, 0, 3], 0)])
    with pytest.warns(UserWarning):
        ds = load_dataset(tmp_path, ann)
    assert [im.image_id for im in ds] == ["a.png"]
    assert ds[0].labels == [2]


def test_missing_files_listed(tmp_path):
    ann = write_fixture(tmp_path, [("a.png", [1, 1, 5, 5], 0), ("b.png", [1, 1, 5, 5], 0)])
    (tmp_path / "a.png").unlink()
    (tmp_path / "b.png").write_text("not an image")
    with pytest.raises(LoadError) as err:
        load_dataset(tmp_path, ann)
    assert {name for name, _ in err.value.failures} == {"a.png", "b.png"}


@pytest.mark.parametrize(
    "doc",
    [[], {"images": []}, {"images": [{"id": 0}], "annotations": [], "categories": []}],
)
def test_schema_errors(tmp_path, doc):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_ground_truth(p)


def test_unknown_category_is_schema_error(tmp_path):
    ann = write_fixture(tmp_path, [("a.png", [1, 1, 5, 5], 0)], categories=[{"id": 0, "name": "Giardia"}])
    with pytest.raises(SchemaError):
        load_dataset(tmp_path, ann)


def test_split_counts():
    assert split_counts(10, SplitSpec()) == (6, 2, 2)
    assert split_counts(11000, SplitSpec()) == (6600, 2200, 2200)
    assert split_counts(70, SplitSpec(50 / 70, 10 / 70, 10 / 70)) == (50, 10, 10)


def test_bad_split_fractions():
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.5, 0.5).validate()
    with pytest.raises(ConfigError):
        SplitSpec(1.2, -0.1, -0.1).validate()


def fake_dataset(per_class):
    return [
        AnnotatedImage(f"c{c}_{i}", (Annotation(BoundingBox(0, 0, 4, 4), c),), array=np.zeros((8, 8, 3), np.uint8))
        for c in range(NUM_CLASSES)
        for i in range(per_class)
    ]


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(0, 1000))
def test_split_is_partition_stratified_and_seeded(per_class, seed):
    ds = fake_dataset(per_class)
    spec = SplitSpec(seed=seed)
    parts = split_dataset(ds, spec)
    ids = [[im.image_id for im in p] for p in parts]
    assert sorted(sum(ids, [])) == sorted(im.image_id for im in ds)
    assert ids == [[im.image_id for im in p] for p in split_dataset(ds, spec)]
    for c in range(NUM_CLASSES):
        got = tuple(sum(1 for im in p if im.category == c) for p in parts)
        assert got == split_counts(per_class, spec)


def test_split_empty_dataset():
    with pytest.raises(ConfigError):
        split_dataset([], SplitSpec())


def test_detector_preprocess_rescales_boxes():
    img = AnnotatedImage(
        "x", (Annotation(BoundingBox(512, 0, 1024, 512), 0),), array=np.zeros((512, 1024, 3), np.uint8)
    )
    norm, boxes = preprocess_for_detector(img, 512)
    assert norm.pixels.shape == (512, 512, 3)
    assert boxes == [BoundingBox(256, 0, 512, 512)]
    assert norm.to_original(boxes[0]) == BoundingBox(512, 0, 1024, 512)


def test_imagenet_normalization():
    norm = preprocess_for_classifier(np.full((10, 20, 3), 255, np.uint8), 600)
    assert norm.pixels.shape == (600, 600, 3)
    np.testing.assert_allclose(norm.pixels[0, 0], [(1 - 0.485) / 0.229, (1 - 0.456) / 0.224, (1 - 0.406) / 0.225], rtol=1e-5)


def test_channel_handling():
    with pytest.warns(UserWarning):
        assert to_rgb(np.zeros((4, 5), np.uint8)).shape == (4, 5, 3)
    with pytest.warns(UserWarning):
        assert to_rgb(np.zeros((4, 5, 4), np.uint8)).shape == (4, 5, 3)
    with pytest.raises(ContractError):
        to_rgb(np.zeros((4, 5, 2), np.uint8))


def test_crop_box_clamps_and_copies():
    arr = np.arange(10 * 10 * 3, dtype=np.uint8).reshape(10, 10, 3)
    c = crop_box(arr, BoundingBox(-3, 2.5, 4, 20))
    assert c.shape == (8, 4, 3)
    c[:] = 0
    assert arr.any()
    with pytest.raises(ContractError):
        crop_box(arr, BoundingBox(20, 20, 30, 30))
