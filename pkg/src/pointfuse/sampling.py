"""Point sets, sub-volume windows, sampling, grouping and interpolation weights."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

ANNOTATED_PERCENT = 70
_CHUNK = 1 << 22  # max distance-matrix entries materialized at once


@dataclass(frozen=True, eq=False)
class PointSet:
    """Points with positions kept apart from their feature channels.

    With normals, features are laid out as (nx, ny, nz, d_1 .. d_D).
    """

    positions: np.ndarray  # (m, 3)
    features: np.ndarray  # (m, C)
    labels: Optional[np.ndarray] = None
    source_indices: Optional[np.ndarray] = None
    normal_channels: Optional[slice] = slice(0, 3)

    def __post_init__(self):
        m = len(self.positions)
        if len(self.features) != m:
            raise ValueError("features length differs from positions")
        if self.labels is not None and len(self.labels) != m:
            raise ValueError("labels length differs from positions")
        if self.source_indices is not None and len(self.source_indices) != m:
            raise ValueError("source_indices length differs from positions")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite point features")

    def __len__(self) -> int:
        return len(self.positions)

    def take(self, idx) -> "PointSet":
        idx = np.asarray(idx, dtype=np.int64)
        src = self.source_indices if self.source_indices is not None else np.arange(len(self))
        return replace(
            self,
            positions=self.positions[idx],
            features=self.features[idx],
            labels=None if self.labels is None else self.labels[idx],
            source_indices=src[idx],
        )


@dataclass(frozen=True)
class SubVolumeSpec:
    center_x: float
    center_y: float
    width: float = 1.5
    depth: float = 1.5

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise ValueError("sub-volume width and depth must be positive")


def extract_subvolume(scene: PointSet, spec: SubVolumeSpec) -> np.ndarray:
    """Indices inside the vertical column; boundaries are inclusive and z is unbounded."""
    p = scene.positions
    inside = (np.abs(p[:, 0] - spec.center_x) <= spec.width / 2) & (
        np.abs(p[:, 1] - spec.center_y) <= spec.depth / 2
    )
    return np.flatnonzero(inside)


def sample_random(indices, n: int, seed) -> np.ndarray:
    """n indices drawn without replacement when possible, else with replacement."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("cannot sample from an empty index set")
    rng = np.random.default_rng(seed)
    if len(indices) >= n:
        return indices[rng.permutation(len(indices))[:n]]
    return indices[rng.integers(0, len(indices), size=n)]


def farthest_point_sample(positions: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    m = len(positions)
    if m < 1:
        raise ValueError("no points to sample")
    if k > m:
        raise ValueError(f"cannot pick {k} points out of {m}")
    out = np.empty(k, dtype=np.int64)
    if k == 0:
        return out
    p = np.asarray(positions, dtype=np.float64)
    dist = np.full(m, np.inf)
    cur = int(start_index)
    for i in range(k):
        out[i] = cur
        d = p - p[cur]
        np.minimum(dist, np.einsum("ij,ij->i", d, d), out=dist)
        cur = int(np.argmax(dist))  # argmax returns the first maximum
    return out


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


class BallQueryResult(NamedTuple):
    """indices: (S, k), each row padded by repeating its first member
    counts: (S,) true group sizes
    fallback: (S,) True where no point was in range and the nearest one was used
    """

    indices: np.ndarray
    counts: np.ndarray
    fallback: np.ndarray

    def groups(self) -> list[np.ndarray]:
        return [row[:c] for row, c in zip(self.indices, self.counts)]


def ball_query(positions: np.ndarray, centers: np.ndarray, radius: float, k: int) -> BallQueryResult:
    """For each center, the first k point indices (ascending) within `radius`."""
    if radius <= 0 or k < 1:
        raise ValueError("ball query needs radius > 0 and k >= 1")
    P = np.asarray(positions, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    S = len(C)
    out = np.zeros((S, k), dtype=np.int64)
    counts = np.zeros(S, dtype=np.int64)
    fallback = np.zeros(S, dtype=bool)
    r2 = radius * radius
    step = max(1, _CHUNK // max(1, len(P)))
    for s0 in range(0, S, step):
        d2 = _sq_dists(C[s0 : s0 + step], P)
        mask = d2 <= r2
        sel = mask & (np.cumsum(mask, axis=1) <= k)
        cnt = sel.sum(axis=1)
        rows, cols = np.nonzero(sel)
        slot = np.arange(len(rows)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        block = out[s0 : s0 + step]
        block[rows, slot] = cols
        empty = cnt == 0
        if empty.any():
            block[empty, 0] = np.argmin(d2[empty], axis=1)
            cnt = np.where(empty, 1, cnt)
        fallback[s0 : s0 + step] = empty
        counts[s0 : s0 + step] = cnt
        pad = np.arange(k)[None, :] >= cnt[:, None]
        block[pad] = np.broadcast_to(block[:, :1], block.shape)[pad]
    return BallQueryResult(out, counts, fallback)


def three_nn_weights(query_positions: np.ndarray, support_positions: np.ndarray):
    """Three nearest supports per query and inverse-distance weights summing to 1.

    With fewer than three supports the available ones are repeated.
    Returns (indices (q, 3), weights (q, 3)).
    """
    Q = np.asarray(query_positions, dtype=np.float64)
    S = np.asarray(support_positions, dtype=np.float64)
    if len(S) == 0:
        raise ValueError("interpolation needs at least one support point")
    n = len(Q)
    idx = np.zeros((n, 3), dtype=np.int64)
    dist = np.zeros((n, 3))
    step = max(1, _CHUNK // len(S))
    for q0 in range(0, n, step):
        d2 = _sq_dists(Q[q0 : q0 + step], S)
        if len(S) > 3:
            part = np.argpartition(d2, 2, axis=1)[:, :3]
            # argpartition may pick any of several equal distances; recover lowest-index ties
            kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
            cand = d2 <= kth[:, None]
            order = np.argsort(np.where(cand, d2, np.inf), axis=1, kind="stable")[:, :3]
        else:
            order = np.argsort(d2, axis=1, kind="stable")
            order = order[:, np.arange(3) % len(S)]
        idx[q0 : q0 + step] = order
        dist[q0 : q0 + step] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    w = 1.0 / (dist + 1e-8)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def training_filter(labels) -> bool:
    """Keep a sub-volume when at least 70% of its vertices are annotated."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return False
    # integer comparison keeps the 70% boundary exact
    return 100 * np.count_nonzero(labels != 0) >= ANNOTATED_PERCENT * labels.size


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_scene_z(scene: PointSet, angle: float, center=(0.0, 0.0, 0.0)) -> PointSet:
    """Rotate positions and normal channels about the vertical axis through `center`."""
    if not np.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    R = rotation_z(angle)
    c = np.asarray(center, dtype=np.float64)
    pos = scene.positions.astype(np.float64, copy=True)
    # only x and y move, so heights stay bit-exact
    pos[:, :2] = (pos[:, :2] - c[:2]) @ R[:2, :2].T + c[:2]
    feat = scene.features
    if scene.normal_channels is not None and feat.shape[1] >= 3:
        feat = feat.copy()
        feat[:, scene.normal_channels] = feat[:, scene.normal_channels] @ R.T
    return replace(scene, positions=pos, features=feat)
