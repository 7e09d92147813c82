import numpy as np
import pytest
from hypothesis import given, strategies as st

from eggfusion.boxes import BoundingBox
from eggfusion.errors import ContractError
from eggfusion.fusion import FinalPrediction, final_label, fuse_average, read_predictions, write_predictions


def simplex(seed, k=11):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(k))


def test_worked_examples():
    a = np.zeros(11)
    a[0] = 1
    b = np.full(11, 1 / 11)
    fused = fuse_average(a, b)
    assert fused[0] == pytest.approx(6 / 11)
    assert final_label(fused)[0] == 0
    np.testing.assert_allclose(fuse_average([0.6, 0.4], [0.3, 0.7]), [0.45, 0.55])
    assert final_label(fuse_average([0.6, 0.4], [0.3, 0.7]))[0] == 1


def test_tie_goes_to_lowest_index():
    assert final_label([0.5, 0.5])[0] == 0
    assert final_label(fuse_average([0.7, 0.3], [0.3, 0.7]))[0] == 0


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_properties(s1, s2):
    a, b = simplex(s1), simplex(s2)
    f = fuse_average(a, b)
    assert abs(f.sum() - 1) < 1e-6 and (f >= 0).all()
    assert np.array_equal(f, fuse_average(b, a))
    assert np.array_equal(fuse_average(a, a), a)
    if np.argmax(a) == np.argmax(b):
        assert final_label(f)[0] == np.argmax(a)


@pytest.mark.parametrize(
    "a,b",
    [([0.5, 0.6], [0.5, 0.5]), ([1.0, 0.0], [0.5, 0.5, 0.0]), ([np.nan, 1.0], [0.5, 0.5]), ([-0.1, 1.1], [0.5, 0.5])],
)
def test_invalid_inputs_raise(a, b):
    with pytest.raises(ContractError):
        fuse_average(a, b)


def test_prediction_round_trip(tmp_path):
    p = FinalPrediction.from_scores("img.png", BoundingBox(1, 2, 30, 40), simplex(1), simplex(2))
    path = tmp_path / "p.json"
    write_predictions(path, [p], ["img.png", "empty.png"], [{"image_id": "bad.png", "error": "x"}], "abc")
    preds, images, errors = read_predictions(path)
    assert preds == [p]
    assert images == ["img.png", "empty.png"]
    assert errors[0]["image_id"] == "bad.png"
    assert p.to_json()["label_name"]
