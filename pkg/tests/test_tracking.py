import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endosim.errors import AmbiguityError, DomainError, TrackingLostError
from endosim.tracking import (BBox, bbox_update, class_map_to_masks, decode_probabilities,
                              mask_to_class_map, sample_mask_pixels, seg_nll)


def test_bbox_fixture():
    m = np.zeros((900, 1020), np.uint8)
    m[100:201, 5:300] = 1        # rows 100..200, cols 5..299
    m[850:, 1000:] = 1           # touches the bottom-right corner
    box = bbox_update(m, eps=20, W=1020, H=900)
    assert box == BBox(left=0, right=1020, top=80, bottom=900)
    m2 = np.zeros((900, 1020), np.uint8)
    m2[400:451, 500:611] = 1
    assert bbox_update(m2, 20, 1020, 900).as_tuple() == (480, 630, 380, 470)


@settings(max_examples=100, deadline=None)
@given(r0=st.integers(0, 49), c0=st.integers(0, 59), h=st.integers(1, 20), w=st.integers(1, 20),
       eps=st.integers(0, 30))
def test_bbox_contains_mask_and_stays_in_image(r0, c0, h, w, eps):
    m = np.zeros((50, 60), np.uint8)
    m[r0:r0 + h, c0:c0 + w] = 1
    b = bbox_update(m, eps)
    rows, cols = np.nonzero(m)
    assert 0 <= b.left <= cols.min() and cols.max() <= b.right <= 60
    assert 0 <= b.top <= rows.min() and rows.max() <= b.bottom <= 50
    assert b.left == max(0, cols.min() - eps)


def test_bbox_errors():
    with pytest.raises(TrackingLostError):
        bbox_update(np.zeros((4, 4)))
    with pytest.raises(DomainError):
        bbox_update(np.full((4, 4), 2))
    with pytest.raises(DomainError):
        bbox_update(np.zeros(4))


def test_sample_pixels():
    m = np.zeros((30, 30), np.uint8)
    m[5:10, 5:10] = 1
    few = sample_mask_pixels(m, 1024, seed=0)
    assert few.shape == (1024, 2) and m[few[:, 0], few[:, 1]].all()
    m[:] = 1
    many = sample_mask_pixels(m, 100, seed=0)
    assert len({tuple(p) for p in many}) == 100
    assert np.array_equal(many, sample_mask_pixels(m, 100, seed=0))
    with pytest.raises(DomainError):
        sample_mask_pixels(np.zeros((3, 3)), 5)


def test_seg_nll_fixture():
    prob = np.array([[[0.7, 0.2, 0.1], [0.0, 0.0, 1.0]]])
    target = np.array([[0, 1]])
    assert seg_nll(prob, target) == pytest.approx((-np.log(0.7) - np.log(1e-12)) / 2)
    with pytest.raises(DomainError):
        seg_nll(np.full((1, 1, 3), 0.5), np.zeros((1, 1), int))
    with pytest.raises(ValueError):
        seg_nll(prob, np.zeros((2, 2), int))


def test_class_map_round_trip():
    l = np.array([[1, 0], [0, 0]])
    r = np.array([[0, 1], [0, 0]])
    c = mask_to_class_map(l, r)
    assert np.array_equal(c, [[1, 2], [0, 0]])
    a, b = class_map_to_masks(c)
    assert np.array_equal(a, l) and np.array_equal(b, r)
    onehot = np.eye(3)[c]
    assert np.array_equal(decode_probabilities(onehot), c)
    with pytest.raises(AmbiguityError):
        mask_to_class_map(l, l)
