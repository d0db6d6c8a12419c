"""Triangle mesh container, ASCII PLY subset I/O, vertex normals, barycentrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class PlyError(ValueError):
    """Raised for malformed PLY input; message carries the 1-based line number."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DegenerateTriangleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh.

    vertices: (n, 3) float64 positions in meters
    faces: (f, 3) int64 vertex indices
    normals: optional (n, 3) unit vectors
    colors: optional (n, 3) uint8 RGB
    labels: optional (n,) int class ids, 0 means unannotated
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.normals is not None:
            object.__setattr__(self, "normals", _as_rows(self.normals, len(v), np.float64))
        if self.colors is not None:
            object.__setattr__(self, "colors", _as_rows(self.colors, len(v), np.uint8))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(lab) != len(v):
                raise ValueError("labels length does not match vertex count")
            object.__setattr__(self, "labels", lab)
        for arr in (self.vertices, self.faces, self.normals, self.colors, self.labels):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_normals(self) -> "Mesh":
        """Return this mesh, filling normals from the faces when the file had none."""
        if self.normals is not None:
            return self
        return Mesh(self.vertices, self.faces, compute_vertex_normals(self), self.colors, self.labels)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        for a, b in zip(
            (self.vertices, self.faces, self.normals, self.colors, self.labels),
            (other.vertices, other.faces, other.normals, other.colors, other.labels),
        ):
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True


def _as_rows(a, n, dtype):
    a = np.asarray(a, dtype=dtype).reshape(-1, 3)
    if len(a) != n:
        raise ValueError("per-vertex attribute length does not match vertex count")
    return a


# ---------------------------------------------------------------------------
# PLY

_VERTEX_PROPS = ("x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "label")
_PROP_GROUPS = {"normals": ("nx", "ny", "nz"), "colors": ("red", "green", "blue")}


def parse_ply(text: str) -> Mesh:
    """Parse an ASCII PLY holding a `vertex` element and a triangle `face` element."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            line = lines[pos - 1].strip()
            if line and not line.startswith("comment") and not line.startswith("obj_info"):
                return pos, line.split()
        raise PlyError(pos, "unexpected end of file")

    lineno, tok = next_line()
    if tok != ["ply"]:
        raise PlyError(lineno, "missing 'ply' magic")
    lineno, tok = next_line()
    if tok[:2] != ["format", "ascii"]:
        raise PlyError(lineno, "only 'format ascii 1.0' is supported")

    elements: list[tuple[str, int, list[str], int]] = []
    while True:
        lineno, tok = next_line()
        if tok[0] == "end_header":
            break
        if tok[0] == "element":
            if len(tok) != 3:
                raise PlyError(lineno, "malformed element line")
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyError(lineno, f"bad element count {tok[2]!r}") from None
            if count < 0:
                raise PlyError(lineno, "negative element count")
            elements.append((tok[1], count, [], lineno))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(lineno, "property before any element")
            if tok[1] == "list":
                if len(tok) != 5:
                    raise PlyError(lineno, "malformed list property")
                elements[-1][2].append("list:" + tok[4])
            else:
                if len(tok) != 3:
                    raise PlyError(lineno, "malformed property line")
                elements[-1][2].append(tok[2])
        else:
            raise PlyError(lineno, f"unexpected header keyword {tok[0]!r}")

    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise PlyError(1, "no vertex element")

    vertex_cols: dict[str, int] = {}
    vertices = np.zeros((0, 3))
    normals = colors = labels = None
    faces = np.zeros((0, 3), dtype=np.int64)
    n_vert = 0

    for name, count, props, hdr_line in elements:
        if name == "vertex":
            for p in ("x", "y", "z"):
                if p not in props:
                    raise PlyError(hdr_line, f"vertex element lacks property {p!r}")
            for p in props:
                if p not in _VERTEX_PROPS:
                    raise PlyError(hdr_line, f"unsupported vertex property {p!r}")
            for group, members in _PROP_GROUPS.items():
                present = [m in props for m in members]
                if any(present) and not all(present):
                    raise PlyError(hdr_line, f"incomplete {group} properties")
            vertex_cols = {p: i for i, p in enumerate(props)}
            rows = np.zeros((count, len(props)))
            for i in range(count):
                lineno, tok = next_line()
                if len(tok) != len(props):
                    raise PlyError(lineno, f"expected {len(props)} values, got {len(tok)}")
                try:
                    rows[i] = [float(t) for t in tok]
                except ValueError:
                    raise PlyError(lineno, "non-numeric vertex value") from None
            n_vert = count
            vertices = rows[:, [vertex_cols[p] for p in ("x", "y", "z")]]
            if "nx" in vertex_cols:
                normals = rows[:, [vertex_cols[p] for p in ("nx", "ny", "nz")]]
            if "red" in vertex_cols:
                colors = rows[:, [vertex_cols[p] for p in ("red", "green", "blue")]].astype(np.uint8)
            if "label" in vertex_cols:
                labels = rows[:, vertex_cols["label"]].astype(np.int64)
        elif name == "face":
            if len(props) != 1 or not props[0].startswith("list:"):
                raise PlyError(hdr_line, "face element must have exactly one list property")
            faces = np.zeros((count, 3), dtype=np.int64)
            for i in range(count):
                lineno, tok = next_line()
                try:
                    vals = [int(t) for t in tok]
                except ValueError:
                    raise PlyError(lineno, "non-integer face value") from None
                if vals[0] != 3 or len(vals) != 4:
                    raise PlyError(lineno, "non-triangle face")
                idx = vals[1:]
                if min(idx) < 0 or max(idx) >= n_vert:
                    raise PlyError(lineno, "index out of range")
                faces[i] = idx
        else:
            raise PlyError(hdr_line, f"unsupported element {name!r}")

    while pos < len(lines):
        pos += 1
        if lines[pos - 1].strip():
            raise PlyError(pos, "trailing data after last element")

    return Mesh(vertices, faces, normals, colors, labels)


def write_ply(mesh: Mesh) -> str:
    out = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if mesh.normals is not None:
        out += ["property double nx", "property double ny", "property double nz"]
    if mesh.colors is not None:
        out += ["property uchar red", "property uchar green", "property uchar blue"]
    if mesh.labels is not None:
        out.append("property ushort label")
    out += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]

    for i in range(mesh.n_vertices):
        # 17 significant digits round-trip any double exactly
        parts = [format(float(c), ".16e") for c in mesh.vertices[i]]
        if mesh.normals is not None:
            parts += [format(float(c), ".16e") for c in mesh.normals[i]]
        if mesh.colors is not None:
            parts += [str(int(c)) for c in mesh.colors[i]]
        if mesh.labels is not None:
            parts.append(str(int(mesh.labels[i])))
        out.append(" ".join(parts))
    for a, b, c in mesh.faces:
        out.append(f"3 {a} {b} {c}")
    return "\n".join(out) + "\n"


def read_ply(path) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ply(fh.read())


def save_ply(path, mesh: Mesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_ply(mesh))


# ---------------------------------------------------------------------------
# normals and barycentrics


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals; their length is twice the triangle area."""
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return np.cross(b - a, c - a)


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals; isolated vertices get zeros."""
    n = np.zeros((mesh.n_vertices, 3))
    if mesh.n_faces:
        fn = face_normals(mesh.vertices, mesh.faces)
        # cross product length is already proportional to area
        for k in range(3):
            np.add.at(n, mesh.faces[:, k], fn)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-300
    n[ok] /= norm[ok, None]
    n[~ok] = 0.0
    return n


def barycentric_coordinates(p, tri) -> np.ndarray:
    """Weights (w1, w2, w3) with w1*v1 + w2*v2 + w3*v3 = p for p in the triangle plane.

    `tri` is a (3, 3) array of vertex positions. Points off the plane are
    projected onto it implicitly (least-squares in the triangle basis).
    """
    p = np.asarray(p, dtype=np.float64)
    v1, v2, v3 = np.asarray(tri, dtype=np.float64)
    e1 = v2 - v1
    e2 = v3 - v1
    r = p - v1
    d00 = e1 @ e1
    d01 = e1 @ e2
    d11 = e2 @ e2
    denom = d00 * d11 - d01 * d01
    # denom = |e1 x e2|^2 = 4 * area^2
    if denom < 4.0 * 1e-24:
        raise DegenerateTriangleError("degenerate triangle (area < 1e-12 m^2)")
    d20 = r @ e1
    d21 = r @ e2
    w2 = (d11 * d20 - d01 * d21) / denom
    w3 = (d00 * d21 - d01 * d20) / denom
    return np.array([1.0 - w2 - w3, w2, w3])
