"""Splat per-pixel features onto mesh vertices through barycentric weights.

Features from every image are summed per vertex in float64 and normalized
once at the end; vertices no pixel reached keep an all-zero feature.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .raycast import AssociationMap

FMAP_VERSION = 1


@dataclass(eq=False)
class FeatureImage:
    data: np.ndarray  # (h, w, D)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("feature image must be (height, width, dim)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def upsample_bilinear(feat: FeatureImage, height: int, width: int) -> FeatureImage:
    """Resize to (height, width) with half-pixel-center bilinear sampling, edges clamped."""
    src = np.asarray(feat.data, dtype=np.float64)
    h0, w0, _ = src.shape

    def coords(n_out, n_in):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0, n_in - 1)
        i0 = np.floor(x).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    y0, y1, fy = coords(height, h0)
    x0, x1, fx = coords(width, w0)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return FeatureImage(out.astype(feat.data.dtype, copy=False))


@dataclass(eq=False)
class VertexFeatureAccumulator:
    n: int
    dim: int
    sums: np.ndarray = field(default=None)
    weight_totals: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sums is None:
            self.sums = np.zeros((self.n, self.dim))
        if self.weight_totals is None:
            self.weight_totals = np.zeros(self.n)

    def copy(self) -> "VertexFeatureAccumulator":
        return VertexFeatureAccumulator(self.n, self.dim, self.sums.copy(), self.weight_totals.copy())


@dataclass(eq=False)
class VertexFeatureStore:
    features: np.ndarray  # (n, D), rows unit length or all zero

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def splat_image(
    assoc: AssociationMap,
    feat: FeatureImage,
    acc: VertexFeatureAccumulator,
    faces: np.ndarray,
) -> VertexFeatureAccumulator:
    """Add w_k * f to the k-th vertex of the hit triangle for every hit pixel (in place)."""
    if (assoc.height, assoc.width) != (feat.height, feat.width):
        raise ValueError("association map and feature image differ in resolution")
    if feat.dim != acc.dim:
        raise ValueError(f"feature dim {feat.dim} != accumulator dim {acc.dim}")
    hit = assoc.hit
    if not hit.any():
        return acc
    tri = assoc.triangle[hit]
    if tri.max() >= len(faces):
        raise ValueError("association map references a triangle outside the mesh")
    vid = faces[tri]  # (P, 3)
    if vid.max() >= acc.n:
        raise ValueError("mesh vertex count exceeds accumulator size")
    w = assoc.weights[hit]  # (P, 3)
    f = np.asarray(feat.data[hit], dtype=np.float64)  # (P, D)
    for k in range(3):
        np.add.at(acc.sums, vid[:, k], w[:, k, None] * f)
        np.add.at(acc.weight_totals, vid[:, k], w[:, k])
    return acc


def merge(acc_a: VertexFeatureAccumulator, acc_b: VertexFeatureAccumulator) -> VertexFeatureAccumulator:
    if (acc_a.n, acc_a.dim) != (acc_b.n, acc_b.dim):
        raise ValueError("accumulator shapes differ")
    return VertexFeatureAccumulator(
        acc_a.n, acc_a.dim, acc_a.sums + acc_b.sums, acc_a.weight_totals + acc_b.weight_totals
    )


def finalize(acc: VertexFeatureAccumulator) -> VertexFeatureStore:
    out = np.zeros((acc.n, acc.dim))
    norm = np.linalg.norm(acc.sums, axis=1)
    ok = (acc.weight_totals > 0) & (norm > 0)
    out[ok] = acc.sums[ok] / norm[ok, None]
    return VertexFeatureStore(out)


def vertex_coverage(acc: VertexFeatureAccumulator) -> float:
    if acc.n == 0:
        raise ValueError("coverage undefined for an empty mesh")
    return float(np.count_nonzero(acc.weight_totals > 0)) / acc.n


def backproject_views(
    views: Sequence[tuple[AssociationMap, FeatureImage]] | Iterable,
    faces: np.ndarray,
    n_vertices: int,
    dim: int,
    threads: int = 1,
) -> VertexFeatureAccumulator:
    """Accumulate many (association, feature) pairs.

    threads == 1 is the sequential reference.  Otherwise views are dealt
    round-robin to per-thread accumulators that are merged at the end.
    """
    views = list(views)
    if threads <= 1:
        acc = VertexFeatureAccumulator(n_vertices, dim)
        for assoc, feat in views:
            splat_image(assoc, feat, acc, faces)
        return acc

    def work(k):
        acc = VertexFeatureAccumulator(n_vertices, dim)
        for assoc, feat in views[k::threads]:
            splat_image(assoc, feat, acc, faces)
        return acc

    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(work, range(threads)))
    total = parts[0]
    for p in parts[1:]:
        total = merge(total, p)
    return total


# ---------------------------------------------------------------------------
# files


def write_fmap(path, feat: FeatureImage) -> None:
    h, w, d = feat.data.shape
    with open(path, "wb") as fh:
        fh.write(b"FMAP" + struct.pack("<IIII", FMAP_VERSION, h, w, d))
        fh.write(np.ascontiguousarray(feat.data, dtype="<f4").tobytes())


def read_fmap(path) -> FeatureImage:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"FMAP":
        raise ValueError(f"{path}: bad magic")
    version, h, w, d = struct.unpack("<IIII", data[4:20])
    if version != FMAP_VERSION:
        raise ValueError(f"{path}: unsupported FMAP version {version}")
    if len(data) != 20 + 4 * h * w * d:
        raise ValueError(f"{path}: truncated feature map")
    return FeatureImage(np.frombuffer(data[20:], dtype="<f4").reshape(h, w, d).copy())


def write_vftr(path, store: VertexFeatureStore) -> None:
    n, d = store.features.shape
    with open(path, "wb") as fh:
        fh.write(b"VFTR" + struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(store.features, dtype="<f4").tobytes())


def read_vftr(path) -> VertexFeatureStore:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"VFTR":
        raise ValueError(f"{path}: bad magic")
    n, d = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * n * d:
        raise ValueError(f"{path}: truncated vertex feature file")
    return VertexFeatureStore(np.frombuffer(data[12:], dtype="<f4").reshape(n, d).astype(np.float64))
