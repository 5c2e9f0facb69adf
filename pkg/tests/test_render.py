import numpy as np
import pytest

from endosim.errors import DomainError, EmptyFrameError
from endosim.geometry import pixel_rays
from endosim.kinematics import RobotState, SegmentLengths, capsule_chain, forward_shape
from endosim.render import (EXPOSURE_TARGET, intensity_map, ray_capsules, render, specular_mask)
from endosim.scene import Instrument, Lumen, Plane, Scene, default_mounts, make_instrument


def plane_scene(z=50.0, **kw):
    return Scene(Plane(np.array([0.0, 0.0, z]), np.array([0.0, 0.0, -1.0])), **kw)


def test_plane_closed_form(K_small):
    fb = render(plane_scene(50.0), None, None, K_small)
    d = pixel_rays(K_small)
    assert np.allclose(fb.depth, 50.0)
    # t = z / d_z, cos = d_z, so I = d_z^3 / z^2
    assert np.allclose(fb.intensity, d[..., 2] ** 3 / 2500.0)
    assert np.allclose(fb.normal, [0, 0, -1])
    assert fb.mask_left.sum() == fb.mask_right.sum() == 0


def test_sigma0_and_albedo_scale_linearly(K_small):
    a = render(plane_scene(), None, None, K_small).intensity
    b = render(plane_scene(sigma0=100.0, tissue_albedo=0.5), None, None, K_small).intensity
    assert np.allclose(b, np.clip(50.0 * a, 0, 1))


def test_auto_exposure_hits_target_on_tissue(K_small):
    fb = render(plane_scene(auto_exposure=True), RobotState(0.3, 0.2, 0, 0, 5), None, K_small)
    tissue = fb.mask_left == 0
    assert np.percentile(fb.intensity[tissue], 95) == pytest.approx(EXPOSURE_TARGET, rel=1e-6)


def _ray_segment_distance(d, a, b, n=4001):
    """Brute force: distance from each ray (origin 0) to points densely sampled on [a, b]."""
    pts = a + np.linspace(0, 1, n)[:, None] * (b - a)
    t = np.clip(pts @ d.T, 0, None)                 # (n, rays)
    closest = t[..., None] * d[None]
    return np.linalg.norm(closest - pts[:, None], axis=-1).min(axis=0)


def test_capsule_hits_match_brute_force(K_small):
    a, b, r = np.array([-3.0, -2.0, 20.0]), np.array([4.0, 3.0, 35.0]), 1.5
    from endosim.kinematics import CapsuleChain
    caps = CapsuleChain(a[None], b[None], r)
    d = pixel_rays(K_small).reshape(-1, 3)
    t, n = ray_capsules(np.zeros_like(d), d, caps)
    dist = _ray_segment_distance(d, a, b)
    clear = np.abs(dist - r) > 1e-2
    assert np.array_equal(np.isfinite(t)[clear], (dist <= r)[clear])
    hit = np.isfinite(t)
    p = t[hit, None] * d[hit]
    assert np.allclose(caps.distance(p), 0.0, atol=1e-9)
    assert np.allclose(np.linalg.norm(n[hit], axis=1), 1.0)


def test_screen_culling_is_exact(K_small):
    line = forward_shape(RobotState(0.9, 0.7, 0.1, 0.6, 6.0), SegmentLengths(), 16,
                         default_mounts()["left"])
    caps = capsule_chain(line, 1.5)
    d = pixel_rays(K_small).reshape(-1, 3)
    v, u = np.mgrid[0:64, 0:64]
    uv = np.stack([u.ravel(), v.ravel()], 1).astype(float)
    t0, _ = ray_capsules(np.zeros_like(d), d, caps)
    t1, _ = ray_capsules(np.zeros_like(d), d, caps, K_small, uv)
    assert np.array_equal(t0, t1)


def test_lumen_hits_lie_on_the_wall(K_small):
    lum = Lumen.random(3)
    d = pixel_rays(K_small).reshape(-1, 3)[::7]
    t, n = lum.intersect(np.zeros_like(d), d)
    assert np.all(np.isfinite(t))
    x = t[:, None] * d
    assert np.abs(lum.field(x)).max() < 1e-4
    # supersampled probes before the hit are all inside
    probes = np.linspace(0, 1, 400, endpoint=False)[:, None, None] * x[None]
    assert (lum.field(probes) > -1e-6).all()
    assert (np.einsum("ij,ij->i", n, d) <= 0).all()


def test_lumen_serialisation_and_validation():
    lum = Lumen.random(5)
    assert Lumen.from_dict(lum.to_dict()).to_dict() == lum.to_dict()
    with pytest.raises(DomainError):
        Lumen(radius=-1.0)
    with pytest.raises(DomainError):
        Lumen(radius=1.0).intersect(np.array([[0.0, 5.0, 10.0]]), np.array([[0.0, 0.0, 1.0]]))


def test_lumen_render_with_instruments(K_small):
    scene = Scene(Lumen.random(0), auto_exposure=True)
    fb = render(scene, RobotState(0.5, 0.4, 0.0, 0.0, 6.0), RobotState(0.5, 0.4, 0.0, np.pi, 6.0), K_small)
    assert fb.mask_left.sum() > 0 and fb.mask_right.sum() > 0
    assert not np.any(fb.mask_left & fb.mask_right)
    assert (fb.depth > 0).all()
    assert fb.intensity.min() >= 0 and fb.intensity.max() <= 1
    assert np.array_equal(fb.specular_mask, (fb.intensity < 0.98).astype(np.uint8))
    # left instrument from the left port shows up on the left half
    cols = np.nonzero(fb.mask_left)[1]
    assert cols.mean() < 32


def test_render_is_worker_independent(K_small):
    scene = Scene(Lumen.random(1))
    s = RobotState(0.6, 0.3, 0.0, 0.4, 5.0)
    a = render(scene, s, None, K_small, workers=1)
    b = render(scene, s, None, K_small, workers=3, chunk_rows=7)
    assert np.array_equal(a.intensity, b.intensity) and np.array_equal(a.depth, b.depth)


def test_render_errors(K_small):
    with pytest.raises(EmptyFrameError):
        render(Scene(Plane(np.array([0, 0, -5.0]), np.array([0, 0, 1.0]))), None, None, K_small)
    with pytest.raises(DomainError):
        inst = make_instrument("left", RobotState(0, 0, 0, 0, 1), SegmentLengths(radius=13.0),
                               default_mounts()["left"])
        Scene(Lumen(radius=12.0), (inst,))
    with pytest.raises(DomainError):
        Instrument("x", None, albedo=0.0)


def test_intensity_map_and_specular():
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[0, 0] = 255
    assert intensity_map(rgb)[0, 0] == pytest.approx(1.0)
    assert np.array_equal(specular_mask(np.array([0.5, 0.98, 0.99])), [1, 0, 0])
