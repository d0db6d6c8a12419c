"""BVH over mesh triangles, nearest-hit ray casting, per-pixel association maps."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .camera import CameraView, pixel_rays
from .geometry import Mesh

T_MIN = 1e-4
DET_EPS = 1e-9
LEAF_SIZE = 4


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flat binary tree.  Node 0 is the root; leaves have count > 0 and index
    `order[start:start + count]`; inner nodes have count == 0 and two children."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.count)

    def is_leaf(self, node: int) -> bool:
        return bool(self.count[node] > 0)

    def depth(self, node: int = 0) -> int:
        if self.is_leaf(node):
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))

    def leaf_triangles(self, node: int) -> np.ndarray:
        s = int(self.start[node])
        return self.order[s : s + int(self.count[node])]


class Hit(NamedTuple):
    triangle: int
    t: float
    weights: np.ndarray


def build_bvh(mesh: Mesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split on the longest axis of each node's bounding box."""
    if mesh.n_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    tmin = tri.min(axis=1)
    tmax = tri.max(axis=1)
    cent = tri.mean(axis=1)

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order_chunks: list[np.ndarray] = []
    n_ordered = 0

    def new_node():
        for lst in (bmin, bmax):
            lst.append(None)
        for lst in (left, right, start, count):
            lst.append(-1)
        return len(count) - 1

    # explicit stack keeps deep trees away from the recursion limit
    root = new_node()
    stack = [(root, np.arange(mesh.n_faces))]
    while stack:
        node, idx = stack.pop()
        lo = tmin[idx].min(axis=0)
        hi = tmax[idx].max(axis=0)
        bmin[node], bmax[node] = lo, hi
        if len(idx) <= leaf_size:
            start[node] = n_ordered
            count[node] = len(idx)
            order_chunks.append(idx)
            n_ordered += len(idx)
            continue
        axis = int(np.argmax(hi - lo))
        half = len(idx) // 2
        part = np.argpartition(cent[idx, axis], half, kind="introselect")
        lidx, ridx = np.sort(idx[part[:half]]), np.sort(idx[part[half:]])
        count[node] = 0
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], ridx))
        stack.append((left[node], lidx))

    return Bvh(
        bmin=np.array(bmin),
        bmax=np.array(bmax),
        left=np.array(left),
        right=np.array(right),
        start=np.array(start),
        count=np.array(count),
        order=np.concatenate(order_chunks),
    )


def _cross(a, b):
    # np.cross spends most of its time on axis bookkeeping for small inputs
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def intersect_triangles(o, d, v0, v1, v2):
    """Moller-Trumbore, broadcast over leading axes.

    Returns (t, b1, b2, ok) where the hit point is (1-b1-b2)*v0 + b1*v1 + b2*v2.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    p = _cross(d, e2)
    det = _dot(e1, p)
    ok = np.abs(det) > DET_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    b1 = _dot(s, p) * inv
    q = _cross(s, e1)
    b2 = _dot(d, q) * inv
    t = _dot(e2, q) * inv
    ok &= (b1 >= 0.0) & (b2 >= 0.0) & (b1 + b2 <= 1.0) & (t > T_MIN)
    return t, b1, b2, ok


def _ray_box(o, inv_d, lo, hi, t_far):
    with np.errstate(invalid="ignore"):
        t1 = (lo - o) * inv_d
        t2 = (hi - o) * inv_d
    # fmin/fmax drop NaNs from 0*inf on axis-parallel rays touching a slab
    tn = np.fmax.reduce(np.fmin(t1, t2), axis=-1)
    tf = np.fmin.reduce(np.fmax(t1, t2), axis=-1)
    return (tn <= tf) & (tf >= T_MIN) & (tn <= t_far)


def raycast_nearest(bvh: Bvh, mesh: Mesh, origin, direction) -> Optional[Hit]:
    """Nearest triangle hit with t > 1e-4, or None.  Equal-t ties go to the lower triangle id."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    with np.errstate(divide="ignore"):
        inv_d = 1.0 / d
    best_t, best_tri, best_b = np.inf, -1, (0.0, 0.0)
    V, F = mesh.vertices, mesh.faces
    stack = [0]
    while stack:
        node = stack.pop()
        if not _ray_box(o, inv_d, bvh.bmin[node], bvh.bmax[node], best_t):
            continue
        if bvh.count[node] > 0:
            tris = bvh.leaf_triangles(node)
            f = F[tris]
            t, b1, b2, ok = intersect_triangles(o, d, V[f[:, 0]], V[f[:, 1]], V[f[:, 2]])
            for k in np.flatnonzero(ok):
                tk, ck = t[k], int(tris[k])
                if tk < best_t or (tk == best_t and ck < best_tri):
                    best_t, best_tri, best_b = float(tk), ck, (b1[k], b2[k])
        else:
            stack.append(int(bvh.right[node]))
            stack.append(int(bvh.left[node]))
    if best_tri < 0:
        return None
    b1, b2 = best_b
    return Hit(best_tri, best_t, np.array([1.0 - b1 - b2, b1, b2]))


def raycast_batch(bvh: Bvh, mesh: Mesh, origins: np.ndarray, directions: np.ndarray):
    """Packet traversal of many rays at once.

    Returns (tri, t, weights): tri is -1 for misses, t is inf for misses and
    weights are zero rows for misses.
    """
    O = np.asarray(origins, dtype=np.float64)
    D = np.asarray(directions, dtype=np.float64)
    n = len(O)
    with np.errstate(divide="ignore"):
        inv_d = 1.0 / D
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    best_b = np.zeros((n, 2))
    V, F = mesh.vertices, mesh.faces

    stack = [(0, np.arange(n))]
    while stack:
        node, rays = stack.pop()
        live = _ray_box(O[rays], inv_d[rays], bvh.bmin[node], bvh.bmax[node], best_t[rays])
        rays = rays[live]
        if len(rays) == 0:
            continue
        if bvh.count[node] > 0:
            # all leaf triangles against all live rays; ascending ids so that
            # argmin resolves equal t to the lower id
            tris = np.sort(bvh.leaf_triangles(node))
            f = F[tris]
            o, d = O[rays][:, None, :], D[rays][:, None, :]
            t, b1, b2, ok = intersect_triangles(o, d, V[f[:, 0]], V[f[:, 1]], V[f[:, 2]])
            t = np.where(ok, t, np.inf)
            k = np.argmin(t, axis=1)
            row = np.arange(len(rays))
            tk, ck = t[row, k], tris[k]
            cur_t = best_t[rays]
            better = np.isfinite(tk) & ((tk < cur_t) | ((tk == cur_t) & (ck < best_tri[rays])))
            r = rays[better]
            kb = k[better]
            best_t[r] = tk[better]
            best_tri[r] = ck[better]
            best_b[r, 0] = b1[row[better], kb]
            best_b[r, 1] = b2[row[better], kb]
        else:
            stack.append((int(bvh.right[node]), rays))
            stack.append((int(bvh.left[node]), rays))

    w = np.zeros((n, 3))
    hit = best_tri >= 0
    w[hit, 0] = 1.0 - best_b[hit, 0] - best_b[hit, 1]
    w[hit, 1:] = best_b[hit]
    return best_tri, best_t, w


# ---------------------------------------------------------------------------
# association maps


@dataclass(frozen=True, eq=False)
class AssociationMap:
    """Per-pixel nearest-surface record.

    triangle: (h, w) face ids, -1 where the ray missed
    weights: (h, w, 3) barycentric weights of the hit point, zero on misses
    depth: (h, w) camera-frame z of the hit point, zero on misses
    """

    triangle: np.ndarray
    weights: np.ndarray
    depth: np.ndarray

    @property
    def height(self) -> int:
        return self.triangle.shape[0]

    @property
    def width(self) -> int:
        return self.triangle.shape[1]

    @property
    def hit(self) -> np.ndarray:
        return self.triangle >= 0

    @property
    def hit_fraction(self) -> float:
        return float(self.hit.mean())

    def __eq__(self, other):
        if not isinstance(other, AssociationMap):
            return NotImplemented
        return (
            np.array_equal(self.triangle, other.triangle)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.depth, other.depth)
        )


def _cast(bvh, mesh, O, D, threads):
    if threads <= 1:
        tri, t, wts = raycast_batch(bvh, mesh, O, D)
    else:
        bounds = np.linspace(0, len(O), threads + 1).astype(int)
        spans = [(bounds[i], bounds[i + 1]) for i in range(threads) if bounds[i + 1] > bounds[i]]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda s: raycast_batch(bvh, mesh, O[s[0] : s[1]], D[s[0] : s[1]]), spans))
        tri = np.concatenate([p[0] for p in parts])
        t = np.concatenate([p[1] for p in parts])
        wts = np.concatenate([p[2] for p in parts])
    return tri, t, wts


def render_association(mesh: Mesh, bvh: Bvh, camera: CameraView, threads: int = 1) -> AssociationMap:
    """Cast one ray through every pixel center.  Pixels are split across threads;
    each is computed independently so the result does not depend on `threads`."""
    return render_associations(mesh, bvh, [camera], threads)[0]


def render_associations(mesh: Mesh, bvh: Bvh, cameras, threads: int = 1, chunk: int = 1 << 18) -> list[AssociationMap]:
    """Render many cameras with their rays packed into shared packets.

    Per-pixel results are identical to rendering each camera alone; packing
    only amortizes the per-node traversal overhead.
    """
    out: list[AssociationMap] = []
    batch: list[CameraView] = []
    size = 0
    for cam in list(cameras) + [None]:
        if cam is not None and (size == 0 or size + cam.width * cam.height <= chunk):
            batch.append(cam)
            size += cam.width * cam.height
            continue
        if batch:
            rays = [pixel_rays(c) for c in batch]
            O = np.concatenate([r[0] for r in rays])
            D = np.concatenate([r[1] for r in rays])
            tri, t, wts = _cast(bvh, mesh, O, D, threads)
            off = 0
            for c, (_, Dc) in zip(batch, rays):
                n = c.width * c.height
                out.append(_to_map(c, Dc, tri[off : off + n], t[off : off + n], wts[off : off + n]))
                off += n
        batch, size = ([cam], cam.width * cam.height) if cam is not None else ([], 0)
    return out


def _to_map(camera, D, tri, t, wts):
    h, w = camera.height, camera.width
    hit = tri >= 0
    depth = np.zeros(h * w)
    # directions are unit length, so camera-frame z = t * (forward . d)
    depth[hit] = t[hit] * (D[hit] @ camera.forward)
    return AssociationMap(tri.reshape(h, w), wts.reshape(h, w, 3), depth.reshape(h, w))


def write_amap(path, amap: AssociationMap) -> None:
    """Debug dump: b"AMAP", u32 h, u32 w, then per pixel i32 tri, 3 x f32 weights, f32 depth."""
    rec = np.zeros(
        amap.height * amap.width,
        dtype=np.dtype([("tri", "<i4"), ("w", "<f4", (3,)), ("depth", "<f4")]),
    )
    rec["tri"] = amap.triangle.ravel()
    rec["w"] = amap.weights.reshape(-1, 3)
    rec["depth"] = amap.depth.ravel()
    with open(path, "wb") as fh:
        fh.write(b"AMAP" + struct.pack("<II", amap.height, amap.width))
        fh.write(rec.tobytes())


def read_amap(path) -> AssociationMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"AMAP":
        raise ValueError(f"{path}: bad magic")
    h, w = struct.unpack("<II", data[4:12])
    rec = np.frombuffer(
        data[12:], dtype=np.dtype([("tri", "<i4"), ("w", "<f4", (3,)), ("depth", "<f4")]), count=h * w
    )
    return AssociationMap(
        rec["tri"].astype(np.int64).reshape(h, w),
        rec["w"].astype(np.float64).reshape(h, w, 3),
        rec["depth"].astype(np.float64).reshape(h, w),
    )
