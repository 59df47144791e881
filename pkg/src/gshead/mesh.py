"""Template head mesh: procedural generation, OBJ/PLY IO, adjacency helpers.

The shipped template is a UV-sphere-derived head shape (~530 vertices) so the
whole pipeline runs without any external asset. Loaders accept OBJ and ASCII
PLY for user-supplied templates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TemplateMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64, triangle vertex indices

    _adjacency: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    def adjacency(self) -> list[np.ndarray]:
        """Per-vertex sorted 1-ring neighbor indices."""
        if self._adjacency is None:
            neigh: list[set[int]] = [set() for _ in range(self.vertex_count)]
            for a, b, c in self.faces:
                neigh[a].update((b, c))
                neigh[b].update((a, c))
                neigh[c].update((a, b))
            self._adjacency = [np.array(sorted(s), dtype=np.int64) for s in neigh]
        return self._adjacency

    def bbox_diagonal(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals, unit length."""
        v = self.vertices
        n = np.zeros_like(v)
        tri = v[self.faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(n, self.faces[:, k], fn)
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return n / norms

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()


def head_template(rings: int = 22, segments: int = 24) -> TemplateMesh:
    """Procedural head-like mesh: an ellipsoid with a nose bump and flat back.

    Default resolution gives 530 vertices. Front of the face points along +z,
    up is +y.
    """
    verts = [np.array([0.0, 1.0, 0.0])]
    for i in range(1, rings):
        phi = np.pi * i / rings            # polar angle from +y
        for j in range(segments):
            theta = 2.0 * np.pi * j / segments
            x = np.sin(phi) * np.sin(theta)
            y = np.cos(phi)
            z = np.sin(phi) * np.cos(theta)
            verts.append(np.array([x, y, z]))
    verts.append(np.array([0.0, -1.0, 0.0]))
    v = np.stack(verts)

    # head proportions + nose bump on the front midline
    v[:, 0] *= 0.78
    v[:, 2] *= 0.92
    front = v[:, 2] > 0.0
    nose = np.exp(-((v[:, 0] / 0.16) ** 2 + ((v[:, 1] + 0.18) / 0.22) ** 2))
    v[front, 2] += 0.18 * nose[front] * v[front, 2]
    # flatten the back of the skull slightly
    back = v[:, 2] < -0.55
    v[back, 2] = -0.55 + 0.6 * (v[back, 2] + 0.55)

    faces = []
    def ring_index(i: int, j: int) -> int:
        return 1 + (i - 1) * segments + (j % segments)

    for j in range(segments):  # top cap
        faces.append([0, ring_index(1, j), ring_index(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring_index(i, j), ring_index(i, j + 1)
            c, d = ring_index(i + 1, j), ring_index(i + 1, j + 1)
            faces.append([a, c, b])
            faces.append([b, c, d])
    bottom = len(v) - 1
    for j in range(segments):  # bottom cap
        faces.append([bottom, ring_index(rings - 1, j + 1), ring_index(rings - 1, j)])

    return TemplateMesh(v, np.asarray(faces))


def lip_vertices(mesh: TemplateMesh, nose_plane_y: float = -0.25,
                 front_z: float = 0.25) -> np.ndarray:
    """Default lip region: vertices below the nose plane on the front of the face."""
    v = mesh.vertices
    sel = (v[:, 1] < nose_plane_y) & (v[:, 2] > front_z)
    return np.flatnonzero(sel).astype(np.int64)


def save_obj(mesh: TemplateMesh, path: str | Path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: str | Path) -> TemplateMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    return TemplateMesh(np.asarray(verts), np.asarray(faces))


def save_ply(mesh: TemplateMesh, path: str | Path) -> None:
    header = [
        "ply", "format ascii 1.0",
        f"element vertex {mesh.vertex_count}",
        "property double x", "property double y", "property double z",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(header + body) + "\n")


def load_ply(path: str | Path) -> TemplateMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vert = n_face = 0
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        elif parts[:1] == ["format"] and parts[1] != "ascii":
            raise ValueError("only ascii PLY is supported")
        elif parts == ["end_header"]:
            i += 1
            break
        i += 1
    verts = np.array([[float(x) for x in lines[i + k].split()[:3]] for k in range(n_vert)])
    faces = []
    for k in range(n_face):
        parts = lines[i + n_vert + k].split()
        count, idx = int(parts[0]), [int(p) for p in parts[1:]]
        for j in range(1, count - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return TemplateMesh(verts, np.asarray(faces))


def load_mesh(path: str | Path) -> TemplateMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".ply":
        return load_ply(path)
    raise ValueError(f"unsupported mesh format: {suffix}")
