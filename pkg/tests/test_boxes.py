import numpy as np
import pytest
from hypothesis import given, strategies as st

from eggfusion.boxes import BoundingBox, iou, iou_matrix
from oracles import grid_iou

coord = st.integers(0, 40)


@st.composite
def int_boxes(draw):
    x0, x1 = sorted(draw(st.lists(coord, min_size=2, max_size=2, unique=True)))
    y0, y1 = sorted(draw(st.lists(coord, min_size=2, max_size=2, unique=True)))
    return (x0, y0, x1, y1)


def test_iou_worked_example():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 15, 15)) == pytest.approx(25 / 175)


def test_disjoint_and_touching_give_zero():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)) == 0.0


def test_identity():
    b = BoundingBox(1.5, 2, 7, 9.25)
    assert iou(b, b) == 1.0


@given(int_boxes(), int_boxes())
def test_iou_matches_grid_oracle(a, b):
    got = iou(BoundingBox(*a), BoundingBox(*b))
    assert abs(got - grid_iou(a, b)) < 1e-9
    assert got == iou(BoundingBox(*b), BoundingBox(*a))
    assert 0.0 <= got <= 1.0


@given(st.lists(int_boxes(), min_size=1, max_size=5), st.lists(int_boxes(), min_size=1, max_size=5))
def test_iou_matrix_agrees_with_scalar(xs, ys):
    A = [BoundingBox(*x) for x in xs]
    B = [BoundingBox(*y) for y in ys]
    m = iou_matrix(np.array(xs), np.array(ys))
    expected = np.array([[iou(a, b) for b in B] for a in A])
    np.testing.assert_allclose(m, expected, atol=1e-12)


def test_box_helpers():
    b = BoundingBox.from_xywh(10, 20, 30, 40)
    assert b.as_list() == [10, 20, 40, 60]
    assert b.to_xywh() == [10, 20, 30, 40]
    assert b.area == 1200
    assert b.scale(0.5, 0.5) == BoundingBox(5, 10, 20, 30)
    assert BoundingBox(-5, -5, 200, 50).clamp(100, 100) == BoundingBox(0, 0, 100, 50)
    assert not BoundingBox(150, 150, 200, 200).intersects_image(100, 100)
    assert not BoundingBox(5, 5, 5, 10).is_valid()
