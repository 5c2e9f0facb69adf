import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endosim import dataset as ds
from endosim.errors import DatasetError, DomainError
from endosim.geometry import CameraIntrinsics
from endosim.kinematics import SegmentLengths

K64 = CameraIntrinsics(30.0, 30.0, 31.5, 31.5, 64, 64)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    m = ds.generate_dataset(root, seed=4, frames=2, K=K64)
    return root, m


def test_decode_is_monotone_over_all_pairs():
    h, l = np.meshgrid(np.arange(256), np.arange(256), indexing="ij")
    d = ds.decode_depth(h, l).ravel()      # lexicographic (high, low) order
    assert np.all(np.diff(d) >= 0)
    # (h, 255) and (h + 1, 0) are the only ties
    ties = np.flatnonzero(np.diff(d) == 0)
    assert np.array_equal(ties % 256, np.full(255, 255))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True))
def test_round_trip_error_bounded(d):
    h, l = ds.encode_depth(d)
    assert abs(ds.decode_depth(h, l) - d) <= 0.5 / (256 * 255) + 1e-15


def test_encode_is_idempotent_on_canonical_pairs():
    h, l = np.meshgrid(np.arange(256), np.arange(255), indexing="ij")
    h2, l2 = ds.encode_depth(ds.decode_depth(h, l))
    assert np.array_equal(h2, h) and np.array_equal(l2, l)


def test_encode_domain():
    for bad in (-0.1, 1.0, np.nan):
        with pytest.raises(DomainError):
            ds.encode_depth(bad)
    with pytest.raises(DatasetError):
        ds.depth_to_rgb(np.array([200.0]), 128.0)
    with pytest.raises(DomainError):
        ds.decode_depth(1, 1, scale=0)


def test_depth_png_round_trip(tmp_path):
    depth = np.random.default_rng(0).uniform(1, 120, (16, 16))
    ds.save_depth(tmp_path / "d.png", depth, 128.0)
    back = ds.load_depth(tmp_path / "d.png", 128.0)
    assert np.abs(back - depth).max() <= 128.0 * 0.5 / (256 * 255) + 1e-12


def test_mask_and_intensity_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = (rng.random((9, 13)) > 0.5).astype(np.uint8)
    ds.save_mask(tmp_path / "m.png", m)
    assert np.array_equal(ds.load_mask(tmp_path / "m.png"), m)
    g = rng.random((9, 13))
    ds.save_intensity(tmp_path / "i.png", g)
    assert np.abs(ds.load_intensity(tmp_path / "i.png") - g).max() <= 0.5 / 255 + 1e-12


def test_write_read_round_trip(small_dataset):
    root, m = small_dataset
    loaded = ds.load_manifest(root)
    assert loaded.to_dict() == m.to_dict()
    f = ds.read_frame(loaded, 1)
    ref = ds.regenerate_frame(loaded, 1)
    assert np.array_equal(f.mask_left, ref.mask_left) and np.array_equal(f.mask_right, ref.mask_right)
    assert np.abs(f.depth - ref.depth).max() <= 128.0 / (256 * 255)
    assert np.abs(f.intensity - ref.intensity).max() <= 0.5 / 255 + 1e-12
    assert f.mask_left.sum() >= ds.MIN_MASK_PX and f.mask_right.sum() >= ds.MIN_MASK_PX


def test_regeneration_is_bit_identical(small_dataset, tmp_path):
    root, m = small_dataset
    again = ds.generate_dataset(tmp_path, seed=4, frames=2, K=K64)
    for a, b in zip(m.frames, again.frames):
        assert a.sha256 == b.sha256
    assert again.to_dict() == m.to_dict()


def test_missing_file_names_path(small_dataset, tmp_path):
    root, _ = small_dataset
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    victim = copy / "frames" / "0001_mask_left.png"
    victim.unlink()
    with pytest.raises(DatasetError, match=str(victim)):
        ds.load_manifest(copy)
    m = ds.load_manifest(copy, check=False)
    with pytest.raises(DatasetError, match="0001_mask_left.png"):
        ds.read_frame(m, 1)


def test_checksum_mismatch(small_dataset, tmp_path):
    root, _ = small_dataset
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    ds.save_mask(copy / "frames" / "0000_mask_left.png", np.ones((64, 64)))
    m = ds.load_manifest(copy)
    with pytest.raises(DatasetError, match="checksum"):
        ds.read_frame(m, 0)
    ds.read_frame(m, 0, verify=False)


def test_manifest_validation(small_dataset, tmp_path):
    root, m = small_dataset
    d = m.to_dict()
    for key, val in (("schema", "other"), ("schema_version", 99)):
        bad = dict(d, **{key: val})
        (tmp_path / "manifest.json").write_text(json.dumps(bad))
        with pytest.raises(DatasetError):
            ds.load_manifest(tmp_path, check=False)
    bad = dict(d)
    del bad["intrinsics"]
    (tmp_path / "manifest.json").write_text(json.dumps(bad))
    with pytest.raises(DatasetError, match="intrinsics"):
        ds.load_manifest(tmp_path, check=False)
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(DatasetError, match="malformed"):
        ds.load_manifest(tmp_path, check=False)
    with pytest.raises(DatasetError):
        ds.Manifest("x", K64, 0, {}, SegmentLengths(), m.frames[::-1])
    with pytest.raises(DatasetError):
        m.frame(7)


def test_random_state_ranges():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = ds.random_state(rng)
        assert 0 <= s.alpha <= np.pi / 2 and 0 <= s.beta <= np.pi / 2
        assert abs(s.gamma) <= np.pi / 8 and 3 <= s.insertion <= 10
