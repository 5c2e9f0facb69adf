import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endosim.errors import BehindCameraError, DomainError
from endosim.geometry import (CameraIntrinsics, Ray, axis_angle, backproject, check_rotation,
                              geodesic_angle, is_rotation, pixel_rays, project, quat_to_matrix,
                              rot_x, rot_y, rot_z)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_intrinsics_validation():
    with pytest.raises(DomainError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(DomainError):
        CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)


def test_matrix_and_dict_round_trip(K):
    assert np.array_equal(K.matrix, [[90, 0, 111.5], [0, 90, 111.5], [0, 0, 1]])
    assert CameraIntrinsics.from_dict(K.to_dict()) == K
    assert K.shape == (224, 224)


def test_scaled_keeps_pixel_centres(K):
    k = K.scaled(0.25)
    assert (k.width, k.height) == (56, 56)
    # the optical axis maps to the same continuous image position
    assert k.cx == pytest.approx((K.cx + 0.5) * 0.25 - 0.5)


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 223), v=st.floats(0, 223), d=st.floats(0.1, 500))
def test_project_inverts_backproject(u, v, d):
    K = CameraIntrinsics(90.0, 80.0, 111.5, 100.0, 224, 224)
    x = backproject(u, v, d, K)
    assert x[2] == pytest.approx(d)
    assert np.allclose(project(x, K), [u, v], atol=1e-9)


def test_backproject_matches_matrix_inverse(K, rng):
    uvd = rng.uniform([0, 0, 1], [223, 223, 100], size=(50, 3))
    ref = uvd[:, 2:] * (np.linalg.inv(K.matrix) @ np.c_[uvd[:, :2], np.ones(50)].T).T
    assert np.allclose(backproject(uvd[:, 0], uvd[:, 1], uvd[:, 2], K), ref)


def test_domain_errors(K):
    with pytest.raises(DomainError):
        backproject(1.0, 1.0, 0.0, K)
    with pytest.raises(BehindCameraError):
        project(np.array([0.0, 0.0, -1.0]), K)
    with pytest.raises(DomainError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))


def test_pixel_rays_unit_and_through_pixels(K):
    d = pixel_rays(K)
    assert d.shape == (224, 224, 3)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1.0)
    uv = project(d[10, 200] * 7.0, K)
    assert np.allclose(uv, [200, 10])


def test_ray_at():
    r = Ray(np.array([1.0, 0, 0]), np.array([0.0, 0, 1]))
    assert np.allclose(r.at(np.array([0.0, 2.0])), [[1, 0, 0], [1, 0, 2]])


@settings(max_examples=100, deadline=None)
@given(q=st.tuples(finite, finite, finite, finite).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_quaternions_give_rotations(q):
    q = np.asarray(q) / np.linalg.norm(q)
    assert is_rotation(quat_to_matrix(q))


def test_elementary_rotations_agree_with_rodrigues():
    a = 0.7
    for R, axis in ((rot_x(a), [1, 0, 0]), (rot_y(a), [0, 1, 0]), (rot_z(a), [0, 0, 1])):
        assert np.allclose(R, axis_angle(axis, a))


def test_geodesic_angle():
    assert geodesic_angle(np.eye(3), axis_angle([1, 1, 0], 0.3)) == pytest.approx(0.3)
    assert geodesic_angle(np.eye(3), rot_z(np.pi)) == pytest.approx(np.pi)
    with pytest.raises(DomainError):
        check_rotation(np.diag([1.0, 1.0, -1.0]))
