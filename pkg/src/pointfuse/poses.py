"""Synthetic camera-pose grid and greedy vertex-coverage image selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .camera import CameraView, look_rotation, make_extrinsics
from .geometry import Mesh
from .raycast import AssociationMap, Bvh, render_associations


@dataclass
class PoseGridConfig:
    heights: Sequence[float] = (1.5, 2.0, 2.5)
    grid_w: int = 10
    grid_d: int = 10
    attitudes: Sequence[float] = (-30.0, 0.0, 30.0)
    azimuths: Sequence[float] = (0.0, 120.0, 240.0)
    resolution: tuple[int, int] = (480, 640)  # (height, width)
    context_threshold: float = 0.25
    budget: Optional[int] = None

    def __post_init__(self):
        if len(self.heights) == 0:
            raise ValueError("at least one camera height is required")
        if self.grid_w < 1 or self.grid_d < 1:
            raise ValueError("grid partitions must be >= 1")
        if not 0.0 <= self.context_threshold <= 1.0:
            raise ValueError("context threshold must lie in [0, 1]")
        if len(self.attitudes) == 0 or len(self.azimuths) == 0:
            raise ValueError("attitudes and azimuths must be nonempty")

    @property
    def n_poses(self) -> int:
        return self.grid_w * self.grid_d * len(self.heights) * len(self.attitudes) * len(self.azimuths)


def generate_pose_grid(scene_bounds, config: PoseGridConfig, intrinsics: np.ndarray) -> list[CameraView]:
    """One camera per (cell center x, cell center y, height, attitude, azimuth).

    Heights are measured from the bottom of `scene_bounds`; ordering is
    x-cell, y-cell, height, attitude, azimuth with the last varying fastest.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in scene_bounds)
    extent = hi - lo
    if extent[0] <= 0 or extent[1] <= 0:
        raise ValueError("scene bounds need positive width and depth")
    h, w = config.resolution
    xs = lo[0] + (np.arange(config.grid_w) + 0.5) * extent[0] / config.grid_w
    ys = lo[1] + (np.arange(config.grid_d) + 0.5) * extent[1] / config.grid_d
    rots = {(at, az): look_rotation(az, at) for at in config.attitudes for az in config.azimuths}
    cams = []
    for x in xs:
        for y in ys:
            for hc in config.heights:
                c = np.array([x, y, lo[2] + hc])
                for at in config.attitudes:
                    for az in config.azimuths:
                        cams.append(CameraView(intrinsics, make_extrinsics(rots[(at, az)], c), w, h))
    return cams


def render_candidates(poses, mesh: Mesh, bvh: Bvh, threads: int = 1) -> list[AssociationMap]:
    return render_associations(mesh, bvh, poses, threads=threads)


def filter_low_context(poses, mesh: Mesh, bvh: Bvh, threshold: float, threads: int = 1, maps=None):
    """Keep (pose, association map) pairs whose hit-pixel fraction is >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if maps is None:
        maps = render_candidates(poses, mesh, bvh, threads)
    return [(cam, amap) for cam, amap in zip(poses, maps) if amap.hit_fraction >= threshold]


def covered_vertices(assoc: AssociationMap, faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """Vertices belonging to any triangle hit by at least one pixel."""
    mask = np.zeros(n_vertices, dtype=bool)
    tri = np.unique(assoc.triangle[assoc.hit])
    if len(tri):
        mask[faces[tri].ravel()] = True
    return mask


def greedy_max_coverage(cover: Sequence[np.ndarray], budget: int) -> list[int]:
    """Greedy max coverage over boolean vertex masks.

    Picks the largest marginal gain each round (lowest index on ties) and
    stops at the budget or when no candidate adds anything.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if len(cover) == 0:
        return []
    C = np.stack([np.asarray(c, dtype=bool) for c in cover])
    covered = np.zeros(C.shape[1], dtype=bool)
    chosen: list[int] = []
    available = np.ones(len(C), dtype=bool)
    while len(chosen) < budget:
        gains = (C & ~covered).sum(axis=1)
        gains[~available] = -1
        best = int(np.argmax(gains))
        if gains[best] <= 0:
            break
        chosen.append(best)
        available[best] = False
        covered |= C[best]
    return chosen


def greedy_select_coverage(candidates, mesh: Mesh, budget: int) -> list[int]:
    """Indices into `candidates` (pairs of pose, association map), in pick order."""
    cover = [covered_vertices(amap, mesh.faces, mesh.n_vertices) for _, amap in candidates]
    return greedy_max_coverage(cover, budget)


def selection_coverage(candidates, mesh: Mesh, selection: Sequence[int]) -> float:
    covered = np.zeros(mesh.n_vertices, dtype=bool)
    for i in selection:
        covered |= covered_vertices(candidates[i][1], mesh.faces, mesh.n_vertices)
    return float(covered.mean()) if mesh.n_vertices else 0.0
