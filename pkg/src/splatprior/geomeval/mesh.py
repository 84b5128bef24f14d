"""Triangle meshes: cleanup, frustum cropping, sampling and surface metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..core import Camera, InvalidInputError


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    colors: Optional[np.ndarray] = None  # (V, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InvalidInputError("triangle index out of range")

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, scale: float, rotation: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        v = scale * self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return TriangleMesh(v, self.triangles.copy(), None if self.colors is None else self.colors.copy())

    def submesh(self, keep_faces: np.ndarray) -> "TriangleMesh":
        """Mesh of the selected faces with unreferenced vertices dropped."""
        tris = self.triangles[keep_faces]
        used, inverse = np.unique(tris.ravel(), return_inverse=True)
        colors = None if self.colors is None else self.colors[used]
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3), colors)


def remove_degenerate(mesh: TriangleMesh, min_area: float = 0.0) -> TriangleMesh:
    t = mesh.triangles
    distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    return mesh.submesh(distinct & (mesh.areas() > min_area))


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Faces of the largest vertex-connected component (by face count)."""
    if mesh.is_empty:
        return mesh
    t = mesh.triangles
    V = len(mesh.vertices)
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(V, V))
    _, labels = connected_components(graph, directed=False)
    face_label = labels[t[:, 0]]
    counts = np.bincount(face_label)
    return mesh.submesh(face_label == np.argmax(counts))


def in_frustum(points: np.ndarray, cam: Camera, near: float, far: float) -> np.ndarray:
    uv, z = cam.project(points)
    K = cam.intrinsics
    with np.errstate(invalid="ignore"):
        return (
            (z >= near) & (z <= far)
            & (uv[:, 0] >= 0) & (uv[:, 0] <= K.width)
            & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height)
        )


def frustum_crop(mesh: TriangleMesh, cams: Sequence[Camera], near: float = 1e-3,
                 far: Optional[float] = None) -> TriangleMesh:
    """Keep triangles with at least one vertex inside the union of view frusta.

    ``far`` defaults to ten times the radius of the mesh bounding box.
    """
    if mesh.is_empty:
        return mesh
    if far is None:
        far = 10.0 * 0.5 * float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    inside = np.zeros(len(mesh.vertices), dtype=bool)
    for cam in cams:
        inside |= in_frustum(mesh.vertices, cam, near, far)
    return mesh.submesh(inside[mesh.triangles].any(axis=1))


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the surface."""
    if mesh.is_empty:
        raise InvalidInputError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    a, b, c = (mesh.vertices[mesh.triangles[face, i]] for i in range(3))
    return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c


@dataclass(frozen=True)
class MeshMetrics:
    accuracy: float
    completeness: float
    chamfer: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "completeness": self.completeness, "chamfer": self.chamfer}


def nearest_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return cKDTree(ref).query(query, k=1)[0]


def mesh_metrics(pred: TriangleMesh, gt: TriangleMesh, samples: int = 100_000, seed: int = 0) -> MeshMetrics:
    """Accuracy (pred to gt), completeness (gt to pred) and their mean.

    Both meshes are sampled with the same seed so swapping the arguments
    exactly swaps accuracy and completeness.
    """
    if pred.is_empty or gt.is_empty:
        raise InvalidInputError("mesh metrics need two non-empty meshes")
    P = sample_surface(pred, samples, seed)
    G = sample_surface(gt, samples, seed)
    acc = float(nearest_distances(P, G).mean())
    comp = float(nearest_distances(G, P).mean())
    return MeshMetrics(acc, comp, (acc + comp) / 2.0)
