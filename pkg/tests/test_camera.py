import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_rotation
from pointfuse.camera import (
    BehindCamera,
    CameraView,
    intrinsics_from_fov,
    look_rotation,
    make_extrinsics,
    pixel_ray,
    pixel_rays,
    project,
    project_points,
    read_intrinsics,
    read_pose,
    write_intrinsics,
    write_pose,
)


def cam(K=None, E=None, w=64, h=48):
    return CameraView(np.eye(3) if K is None else K, np.eye(4) if E is None else E, w, h)


def test_identity_pixel_zero():
    o, d = pixel_ray(cam(), 0, 0)
    np.testing.assert_array_equal(o, 0)
    np.testing.assert_allclose(d, np.array([0.5, 0.5, 1]) / np.linalg.norm([0.5, 0.5, 1]))


def test_principal_point_is_optical_axis():
    K = intrinsics_from_fov(64, 48, 60)
    c = cam(K)
    # cx - 0.5 is not an integer column for an even-sized image, so go through
    # the vectorized ray generator which accepts fractional pixel indices
    _, d = pixel_rays(c, np.array([K[0, 2] - 0.5]), np.array([K[1, 2] - 0.5]))
    np.testing.assert_allclose(d[0], [0, 0, 1], atol=1e-15)


def test_rotated_camera_direction():
    rng = np.random.default_rng(0)
    K = intrinsics_from_fov(64, 48, 70)
    R = random_rotation(rng)
    t = rng.normal(size=3)
    _, d0 = pixel_ray(cam(K), 10, 7)
    o1, d1 = pixel_ray(cam(K, make_extrinsics(R, t)), 10, 7)
    np.testing.assert_allclose(o1, t)
    np.testing.assert_allclose(d1, R @ d0, atol=1e-12)


def test_pixel_out_of_range():
    with pytest.raises(ValueError):
        pixel_ray(cam(), 64, 0)


def test_camera_validation():
    with pytest.raises(ValueError):
        cam(K=np.diag([0.0, 1, 1]))
    E = np.eye(4)
    E[0, 0] = 2
    with pytest.raises(ValueError):
        cam(E=E)
    with pytest.raises(ValueError):
        CameraView(np.eye(3), np.eye(4), 0, 5)


def test_project_on_axis():
    K = intrinsics_from_fov(64, 48, 60)
    u, v, z = project(cam(K), [0, 0, 2])
    assert (u, v, z) == pytest.approx((K[0, 2], K[1, 2], 2.0))


def test_project_behind():
    with pytest.raises(BehindCamera):
        project(cam(), [0, 0, -1])
    with pytest.raises(BehindCamera):
        project(cam(), [1, 0, 0])
    uv, z = project_points(cam(), np.array([[0, 0, -1.0], [0, 0, 1.0]]))
    assert np.isnan(uv[0]).all() and np.isfinite(uv[1]).all()


@given(seed=st.integers(0, 2**31), u=st.integers(0, 63), v=st.integers(0, 47), t=st.floats(0.1, 50))
def test_project_roundtrip(seed, u, v, t):
    rng = np.random.default_rng(seed)
    c = cam(intrinsics_from_fov(64, 48, 75), make_extrinsics(random_rotation(rng), rng.normal(size=3)))
    o, d = pixel_ray(c, u, v)
    pu, pv, depth = project(c, o + t * d)
    assert pu == pytest.approx(u + 0.5, abs=1e-6) and pv == pytest.approx(v + 0.5, abs=1e-6)
    # scaling the ray of the floored pixel by the recovered range reproduces p
    o2, d2 = pixel_ray(c, int(np.floor(pu)), int(np.floor(pv)))
    rng_ = depth / (d2 @ c.forward)
    np.testing.assert_allclose(o2 + rng_ * d2, o + t * d, atol=1e-6)


def test_look_rotation_level_and_down():
    R = look_rotation(0, 0)
    np.testing.assert_allclose(R[:, 2], [1, 0, 0], atol=1e-15)
    assert R[2, 2] == 0
    assert look_rotation(90, -30)[2, 2] < 0  # negative attitude looks down
    for az, at in [(0, 0), (120, -30), (240, 30)]:
        R = look_rotation(az, at)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
    # level camera: image rows point straight down in the world
    np.testing.assert_allclose(look_rotation(120, 0)[:, 1], [0, 0, -1], atol=1e-15)


def test_pose_and_intrinsics_files(tmp_path):
    rng = np.random.default_rng(3)
    E = make_extrinsics(random_rotation(rng), rng.normal(size=3))
    write_pose(tmp_path / "p.txt", E)
    np.testing.assert_array_equal(read_pose(tmp_path / "p.txt"), E)
    K = intrinsics_from_fov(640, 480, 58)
    write_intrinsics(tmp_path / "k.txt", K)
    np.testing.assert_array_equal(read_intrinsics(tmp_path / "k.txt"), K)
    assert len((tmp_path / "k.txt").read_text().split()) == 16


def test_bad_intrinsics_file(tmp_path):
    M = np.eye(4)
    M[3, 0] = 1
    (tmp_path / "k.txt").write_text(" ".join(map(str, M.ravel())))
    with pytest.raises(ValueError, match="identity"):
        read_intrinsics(tmp_path / "k.txt")
    (tmp_path / "short.txt").write_text("1 2 3")
    with pytest.raises(ValueError, match="16"):
        read_pose(tmp_path / "short.txt")
