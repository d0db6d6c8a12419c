"""Synthetic rooms and synthetic per-pixel features.

Rooms are an axis-aligned floor and four walls plus boxes standing on the
floor (furniture) and thin panels hung on the walls (pictures).  Every
object owns its vertices, so labels and colors are per object.

Class ids follow the 20-class benchmark numbering (0 = unannotated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backprojection import FeatureImage
from .camera import CameraView
from .geometry import Mesh, compute_vertex_normals
from .raycast import AssociationMap

NUM_CLASSES = 20
CLASS_NAMES = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window", "bookshelf",
    "picture", "counter", "desk", "curtain", "refrigerator", "shower_curtain", "toilet", "sink",
    "bathtub", "otherfurniture",
)  # fmt: skip
WALL, FLOOR, TABLE, PICTURE = 1, 2, 7, 11

DEFAULT_PALETTE = {
    WALL: (174, 199, 232),
    FLOOR: (152, 223, 138),
    TABLE: (255, 152, 150),
    PICTURE: (196, 156, 148),
}
# spare colors for export of classes the generator never places
_FALLBACK_COLOR = (128, 128, 128)


class PlacementError(RuntimeError):
    pass


@dataclass
class SceneRecipe:
    seed: int = 0
    room: tuple[float, float, float] = (4.0, 4.0, 2.6)  # width (x), depth (y), height (z)
    room_jitter: float = 0.0  # each extent is scaled by U(1 - j, 1 + j)
    boxes: tuple[int, int] = (2, 4)  # inclusive count range
    panels: tuple[int, int] = (1, 3)
    grid_step: float | None = None  # tessellate quads so no edge exceeds this length
    palette: dict = field(default_factory=lambda: dict(DEFAULT_PALETTE))

    def __post_init__(self):
        if min(self.room) <= 0:
            raise ValueError("room extents must be positive")
        for lo, hi in (self.boxes, self.panels):
            if lo < 0 or hi < lo:
                raise ValueError("object count range must satisfy 0 <= min <= max")
        if self.grid_step is not None and self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if len(self.palette) > NUM_CLASSES:
            raise ValueError("more classes than the label space holds")


@dataclass
class Placement:
    """One object in the room: its class, a quad list, and its vertex id range."""

    label: int
    kind: str
    quads: list
    first_vertex: int = 0
    n_vertices: int = 0


def _quad(origin, ex, ey):
    o = np.asarray(origin, dtype=float)
    return (o, np.asarray(ex, dtype=float), np.asarray(ey, dtype=float))


def _box_quads(x0, y0, sx, sy, sz):
    """Top and four sides of an axis-aligned box resting on z = 0, outward facing."""
    X, Y, Z = np.eye(3)
    return [
        _quad((x0, y0, sz), sx * X, sy * Y),
        _quad((x0, y0, 0), sx * X, sz * Z),
        _quad((x0, y0 + sy, 0), sz * Z, sx * X),
        _quad((x0, y0, 0), sz * Z, sy * Y),
        _quad((x0 + sx, y0, 0), sy * Y, sz * Z),
    ]


def layout_scene(recipe: SceneRecipe) -> tuple[np.ndarray, list[Placement]]:
    """Deterministic room extents and object placements for a recipe."""
    rng = np.random.default_rng(recipe.seed)
    j = recipe.room_jitter
    W, D, H = (e * (rng.uniform(1 - j, 1 + j) if j else 1.0) for e in recipe.room)
    X, Y, Z = np.eye(3)
    places = [Placement(FLOOR, "floor", [_quad((0, 0, 0), W * X, D * Y)])]
    # walls face into the room
    places.append(Placement(WALL, "wall", [_quad((0, 0, 0), H * Z, W * X)]))
    places.append(Placement(WALL, "wall", [_quad((0, D, 0), W * X, H * Z)]))
    places.append(Placement(WALL, "wall", [_quad((0, 0, 0), D * Y, H * Z)]))
    places.append(Placement(WALL, "wall", [_quad((W, 0, 0), H * Z, D * Y)]))

    footprints: list[tuple[float, float, float, float]] = []
    for _ in range(int(rng.integers(recipe.boxes[0], recipe.boxes[1] + 1))):
        for _attempt in range(100):
            sx, sy = rng.uniform(0.4, 1.2, size=2)
            sz = rng.uniform(0.4, 1.0)
            if sx + 0.3 >= W or sy + 0.3 >= D:
                continue
            x0 = rng.uniform(0.15, W - sx - 0.15)
            y0 = rng.uniform(0.15, D - sy - 0.15)
            fp = (x0 - 0.1, y0 - 0.1, x0 + sx + 0.1, y0 + sy + 0.1)
            if not any(_overlap(fp, g) for g in footprints):
                footprints.append(fp)
                places.append(Placement(TABLE, "box", _box_quads(x0, y0, sx, sy, sz)))
                break
        else:
            raise PlacementError("could not place a box after 100 attempts")

    hung: dict[int, list[tuple[float, float]]] = {0: [], 1: [], 2: [], 3: []}
    gap = 0.02
    for _ in range(int(rng.integers(recipe.panels[0], recipe.panels[1] + 1))):
        for _attempt in range(100):
            wall = int(rng.integers(4))
            span = W if wall in (0, 1) else D
            pw = rng.uniform(0.4, 1.0)
            ph = rng.uniform(0.3, 0.7)
            if pw + 0.2 > span or ph + 1.0 > H:
                continue
            a = rng.uniform(0.1, span - pw - 0.1)
            z0 = rng.uniform(1.0, min(H - ph - 0.1, 1.8))
            if z0 < 1.0:
                continue
            if any(a < b1 + 0.05 and b0 - 0.05 < a + pw for b0, b1 in hung[wall]):
                continue
            hung[wall].append((a, a + pw))
            q = {
                0: _quad((a, gap, z0), ph * Z, pw * X),
                1: _quad((a, D - gap, z0), pw * X, ph * Z),
                2: _quad((gap, a, z0), pw * Y, ph * Z),
                3: _quad((W - gap, a, z0), ph * Z, pw * Y),
            }[wall]
            places.append(Placement(PICTURE, "panel", [q]))
            break
        else:
            raise PlacementError("could not hang a panel after 100 attempts")
    return np.array([W, D, H]), places


def _overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _tessellate(quad, step):
    o, ex, ey = quad
    nx = 1 if step is None else max(1, math.ceil(np.linalg.norm(ex) / step - 1e-9))
    ny = 1 if step is None else max(1, math.ceil(np.linalg.norm(ey) / step - 1e-9))
    s, t = np.meshgrid(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1), indexing="ij")
    verts = o + s.reshape(-1, 1) * ex + t.reshape(-1, 1) * ey
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a, b = vid[:-1, :-1].ravel(), vid[1:, :-1].ravel()
    c, d = vid[1:, 1:].ravel(), vid[:-1, 1:].ravel()
    # counter-clockwise seen from ex x ey
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return verts, faces


def generate_scene(recipe: SceneRecipe) -> Mesh:
    mesh, _ = generate_scene_with_layout(recipe)
    return mesh


def generate_scene_with_layout(recipe: SceneRecipe) -> tuple[Mesh, list[Placement]]:
    _, places = layout_scene(recipe)
    verts, faces, labels, colors = [], [], [], []
    n = 0
    for pl in places:
        pl.first_vertex = n
        color = recipe.palette.get(pl.label, _FALLBACK_COLOR)
        for q in pl.quads:
            v, f = _tessellate(q, recipe.grid_step)
            verts.append(v)
            faces.append(f + n)
            labels.append(np.full(len(v), pl.label))
            colors.append(np.tile(color, (len(v), 1)))
            n += len(v)
        pl.n_vertices = n - pl.first_vertex
    mesh = Mesh(np.concatenate(verts), np.concatenate(faces), None, np.concatenate(colors), np.concatenate(labels))
    mesh = Mesh(mesh.vertices, mesh.faces, compute_vertex_normals(mesh), mesh.colors, mesh.labels)
    return mesh, places


def majority_label(labels_of_triangle: np.ndarray) -> np.ndarray:
    """Row-wise most frequent label of (P, 3) triangle labels; ties pick the smallest id."""
    a, b, c = labels_of_triangle.T
    out = np.minimum(np.minimum(a, b), c)
    out = np.where(a == b, a, out)
    out = np.where(a == c, a, out)
    out = np.where(b == c, b, out)
    return out


def synth_features(
    mesh: Mesh,
    camera: CameraView,
    assoc: AssociationMap,
    dim: int,
    noise: float = 0.0,
    seed: int = 0,
    num_classes: int = NUM_CLASSES,
) -> FeatureImage:
    """Stand-in for a learned 2D feature extractor.

    Hit pixels get [one-hot(majority class of the hit triangle), interpolated
    vertex color / 255, zeros] plus N(0, noise^2); misses stay zero.
    """
    if dim < num_classes + 3:
        raise ValueError(f"feature dim must be >= {num_classes + 3}")
    if (assoc.height, assoc.width) != (camera.height, camera.width):
        raise ValueError("association map does not match camera resolution")
    if mesh.labels is None:
        raise ValueError("synthetic features need a labeled mesh")
    out = np.zeros((assoc.height, assoc.width, dim))
    hit = assoc.hit
    if hit.any():
        vid = mesh.faces[assoc.triangle[hit]]
        cls = majority_label(mesh.labels[vid])
        f = np.zeros((len(vid), dim))
        annotated = cls > 0
        f[np.flatnonzero(annotated), cls[annotated] - 1] = 1.0
        if mesh.colors is not None:
            w = assoc.weights[hit]
            f[:, num_classes : num_classes + 3] = np.einsum("pk,pkc->pc", w, mesh.colors[vid].astype(np.float64)) / 255.0
        if noise > 0:
            f += np.random.default_rng(seed).normal(0.0, noise, size=f.shape)
        out[hit] = f
    return FeatureImage(out)


def canonical_feature(label: int, color, dim: int, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Unit-length noise-free feature of an object with this class and color."""
    f = np.zeros(dim)
    if label > 0:
        f[label - 1] = 1.0
    f[num_classes : num_classes + 3] = np.asarray(color, dtype=np.float64) / 255.0
    return f / np.linalg.norm(f)


def class_color(label: int, palette=None) -> tuple[int, int, int]:
    palette = palette or DEFAULT_PALETTE
    if label in palette:
        return tuple(palette[label])
    if label <= 0:
        return (0, 0, 0)
    # deterministic distinct-ish color for ids the palette does not list
    rng = np.random.default_rng(label)
    return tuple(int(c) for c in rng.integers(40, 230, size=3))
