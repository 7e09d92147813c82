import numpy as np

from eggfusion.categories import NUM_CLASSES
from eggfusion.config import SynthConfig
from eggfusion.data import load_dataset
from eggfusion.synth import read_synth_config, synth_generate, write_dataset, write_synth_config


def test_generates_balanced_labelled_images():
    ds = synth_generate(SynthConfig(image_size=64, per_class_count=2, seed=3))
    assert len(ds) == 2 * NUM_CLASSES
    assert sorted(im.category for im in ds) == sorted(list(range(NUM_CLASSES)) * 2)
    for im in ds:
        assert im.pixels.shape == (64, 64, 3)
        (box,) = im.boxes
        assert box.is_valid() and 0 <= box.xmin and box.xmax <= 64 and 0 <= box.ymin and box.ymax <= 64


def test_seeded_reproducibility():
    cfg = SynthConfig(image_size=48, per_class_count=1, seed=7)
    a, b = synth_generate(cfg), synth_generate(cfg)
    assert all(np.array_equal(x.pixels, y.pixels) and x.annotations == y.annotations for x, y in zip(a, b))
    c = synth_generate(cfg, seed=8)
    assert not np.array_equal(a[0].pixels, c[0].pixels)


def test_box_tightly_covers_egg():
    # Without noise, the background outside the box is untouched by the egg.
    (im,) = synth_generate(SynthConfig(image_size=96, per_class_count=1, noise_sigma=0.0, seed=1))[:1]
    b = im.boxes[0]
    px = im.pixels.astype(int)
    inside = px[int(b.ymin) : int(b.ymax), int(b.xmin) : int(b.xmax)]
    assert inside.std() > px[: int(b.ymin) or 1].std()


def test_write_and_reload(tmp_path):
    ds = synth_generate(SynthConfig(image_size=40, per_class_count=1, seed=0))
    write_dataset(ds, tmp_path / "img", tmp_path / "ann.json")
    back = load_dataset(tmp_path / "img", tmp_path / "ann.json")
    assert [im.image_id for im in back] == [im.image_id for im in ds]
    assert [im.annotations for im in back] == [im.annotations for im in ds]
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(back, ds))


def test_synth_config_file_round_trip(tmp_path):
    cfg = SynthConfig(image_size=80, per_class_count=3, noise_sigma=2.5, seed=11)
    write_synth_config(cfg, tmp_path / "s.cfg")
    assert read_synth_config(tmp_path / "s.cfg") == cfg
