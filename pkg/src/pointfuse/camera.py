"""Pinhole camera model.

Conventions: right-handed camera frame, +z forward, u (columns) rightward,
v (rows) downward.  Extrinsics are stored camera-to-world.  Pixel (u, v)
is sampled at its center (u + 0.5, v + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BehindCamera(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraView:
    intrinsics: np.ndarray  # (3, 3) K in pixels
    extrinsics: np.ndarray  # (4, 4) camera-to-world
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        E = np.asarray(self.extrinsics, dtype=np.float64).reshape(4, 4)
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("intrinsics must have positive fx, fy")
        R = E[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("extrinsic rotation is not orthonormal")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("image size must be at least 1x1")
        K.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", E)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.extrinsics[:3, 2]


def intrinsics_from_fov(width: int, height: int, hfov_deg: float) -> np.ndarray:
    """Square-pixel K with the principal point at the image center."""
    f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
    return np.array([[f, 0.0, width / 2], [0.0, f, height / 2], [0.0, 0.0, 1.0]])


def scale_intrinsics(K: np.ndarray, factor: float) -> np.ndarray:
    """Intrinsics for an image resized by `factor` (pixel-center convention)."""
    K = np.array(K, dtype=np.float64)
    K[:2, :] *= factor
    return K


def pixel_ray(camera: CameraView, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    o, d = pixel_rays(camera, np.array([u]), np.array([v]))
    return o[0], d[0]


def pixel_rays(camera: CameraView, us=None, vs=None) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray origins and unit directions through pixel centers.

    With no pixel lists, returns rays for the whole image in row-major order.
    """
    if us is None:
        vv, uu = np.mgrid[0 : camera.height, 0 : camera.width]
        us, vs = uu.ravel(), vv.ravel()
    pix = np.stack([np.asarray(us) + 0.5, np.asarray(vs) + 0.5, np.ones(len(us))], axis=1)
    d_cam = np.linalg.solve(camera.intrinsics, pix.T).T
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def world_to_camera(camera: CameraView, points: np.ndarray) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - camera.center) @ camera.rotation


def project(camera: CameraView, p) -> tuple[float, float, float]:
    """Continuous pixel coordinates (u, v) and camera-frame depth of a world point."""
    pc = world_to_camera(camera, np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    if pc[2] <= 0:
        raise BehindCamera("point is behind the camera")
    uvw = camera.intrinsics @ (pc / pc[2])
    return float(uvw[0]), float(uvw[1]), float(pc[2])


def project_points(camera: CameraView, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized project(); rows behind the camera get NaN pixel coordinates."""
    pc = world_to_camera(camera, points)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = (pc @ camera.intrinsics.T)[:, :2] / z[:, None]
    uv[z <= 0] = np.nan
    return uv, z


def look_rotation(azimuth_deg: float, attitude_deg: float) -> np.ndarray:
    """Camera-to-world rotation for a camera yawed by azimuth and pitched by attitude.

    Azimuth 0 looks along world +x; positive attitude tilts the optical axis upward.
    """
    az, at = np.radians(azimuth_deg), np.radians(attitude_deg)
    forward = np.array([np.cos(at) * np.cos(az), np.cos(at) * np.sin(az), np.sin(at)])
    right = np.array([np.sin(az), -np.cos(az), 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def make_extrinsics(rotation: np.ndarray, center) -> np.ndarray:
    E = np.eye(4)
    E[:3, :3] = rotation
    E[:3, 3] = center
    return E


# ---------------------------------------------------------------------------
# files: 16 whitespace separated floats, row-major 4x4


def _read_matrix4(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        vals = fh.read().split()
    if len(vals) != 16:
        raise ValueError(f"{path}: expected 16 values, found {len(vals)}")
    return np.array([float(v) for v in vals]).reshape(4, 4)


def _write_matrix4(path, M: np.ndarray) -> None:
    rows = [" ".join(format(float(x), ".17g") for x in row) for row in np.asarray(M).reshape(4, 4)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def read_pose(path) -> np.ndarray:
    return _read_matrix4(path)


def write_pose(path, extrinsics: np.ndarray) -> None:
    _write_matrix4(path, extrinsics)


def read_intrinsics(path) -> np.ndarray:
    M = _read_matrix4(path)
    expected = np.eye(4)
    expected[:3, :3] = M[:3, :3]
    if not np.array_equal(M, expected):
        raise ValueError(f"{path}: intrinsics must embed K in an otherwise identity 4x4")
    return M[:3, :3].copy()


def write_intrinsics(path, K: np.ndarray) -> None:
    M = np.eye(4)
    M[:3, :3] = K
    _write_matrix4(path, M)
