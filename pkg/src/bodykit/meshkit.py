"""Triangle meshes: adjacency, cotangent weights, Chamfer/P2P metrics, OBJ I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .diffnet import tensor as T
from .diffnet.tensor import Tensor

log = logging.getLogger(__name__)

KDTREE_MIN_POINTS = 64


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def V(self) -> int:
        return len(self.vertices)

    @property
    def F(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(np.asarray(vertices).reshape(self.V, 3), self.faces)

    def validate(self) -> "Mesh":
        """Check index range, repeated indices and edge manifoldness."""
        f = self.faces
        if f.size and (f.min() < 0 or f.max() >= self.V):
            raise MeshError(f"face index out of range [0, {self.V})")
        dup = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if dup.any():
            raise MeshError(f"face {int(np.argmax(dup))} repeats a vertex index: {f[dup][0].tolist()}")
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if (counts > 2).any():
            raise MeshError(f"{int((counts > 2).sum())} edges are shared by more than 2 faces")
        return self


@dataclass(frozen=True)
class LaplacianWeights:
    """Cotangent weight per undirected edge plus the one-ring of every vertex.

    ``edges`` holds each undirected edge once (i < j); ``ring`` lists the
    neighbor indices per vertex. Weights are symmetric by construction.
    """

    edges: np.ndarray  # (E, 2)
    weights: np.ndarray  # (E,)
    ring: tuple[np.ndarray, ...]

    def weight(self, v: int, n: int) -> float:
        a, b = min(v, n), max(v, n)
        hit = np.nonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))[0]
        if not len(hit):
            raise KeyError(f"({v}, {n}) is not an edge")
        return float(self.weights[hit[0]])


def build_adjacency(mesh: Mesh) -> LaplacianWeights:
    """Cotangent weights l_vn = (cot a + cot b) / 2 over the angles opposite each edge."""
    mesh.validate()
    x = mesh.vertices
    f = mesh.faces
    area2 = np.linalg.norm(np.cross(x[f[:, 1]] - x[f[:, 0]], x[f[:, 2]] - x[f[:, 0]]), axis=1)
    bad = np.nonzero(area2 <= 1e-14)[0]
    if len(bad):
        raise MeshError(f"degenerate (zero-area) triangle at face {int(bad[0])}: {f[bad[0]].tolist()}")

    pairs, cots = [], []
    for k in range(3):
        i, j, o = f[:, (k + 1) % 3], f[:, (k + 2) % 3], f[:, k]
        u = x[i] - x[o]
        w = x[j] - x[o]
        cot = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
        pairs.append(np.stack([i, j], axis=1))
        cots.append(cot)
    pairs = np.sort(np.concatenate(pairs), axis=1)
    cots = np.concatenate(cots)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    weights = 0.5 * np.bincount(inverse.ravel(), weights=cots, minlength=len(edges))

    nbrs: list[list[int]] = [[] for _ in range(mesh.V)]
    for a, b in edges:
        nbrs[a].append(int(b))
        nbrs[b].append(int(a))
    ring = tuple(np.array(sorted(n), dtype=np.int64) for n in nbrs)
    return LaplacianWeights(edges=edges, weights=weights, ring=ring)


def laplacian_loss(vertices, weights: LaplacianWeights) -> Tensor:
    """sum_v sum_{n in ring(v)} ||l_vn (x_v - x_n)||^2.

    Each undirected edge appears twice in the double sum, hence the factor 2.
    ``vertices`` may be (V, 3) or batched (B, V, 3); batches are summed.
    """
    x = T.as_tensor(vertices)
    axis = x.ndim - 2
    d = T.take(x, weights.edges[:, 0], axis=axis) - T.take(x, weights.edges[:, 1], axis=axis)
    w2 = (weights.weights ** 2).astype(x.dtype)[:, None]
    return 2.0 * T.tsum(T.square(d) * w2)


def _nearest(src: np.ndarray, dst: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    if len(dst) < KDTREE_MIN_POINTS and tree is None:
        d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)
    tree = tree if tree is not None else cKDTree(dst)
    return tree.query(src)[1]


def chamfer(a, b, tree_b: cKDTree | None = None) -> Tensor:
    """Symmetric mean nearest-neighbor distance (unsquared, meters).

    0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|). Correspondences are
    found on current values; the gradient flows through the matched pairs.
    """
    a = T.as_tensor(a)
    b = T.as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != 3 or b.shape[1] != 3:
        raise ValueError(f"chamfer expects (N, 3) and (M, 3) point sets, got {a.shape} and {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer of an empty point set is undefined")
    ab = _nearest(a.data, b.data, tree_b)
    ba = _nearest(b.data, a.data)
    d_ab = T.norm(a - T.take(b, ab, axis=0), axis=-1)
    d_ba = T.norm(b - T.take(a, ba, axis=0), axis=-1)
    return 0.5 * (T.mean(d_ab) + T.mean(d_ba))


def p2p(a, b) -> float:
    """Mean per-vertex Euclidean distance between same-topology meshes."""
    va = a.vertices if isinstance(a, Mesh) else np.asarray(a)
    vb = b.vertices if isinstance(b, Mesh) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValueError(f"p2p needs matching vertex arrays, got {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb, axis=-1).mean())


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> Mesh:
    verts, faces = [], []
    skipped: dict[str, int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif tag == "f":
            if len(parts) != 4:
                raise MeshError(f"{path}:{lineno}: only triangular faces are supported "
                                f"(got {len(parts) - 1} vertices)")
            # "f 1/2/3 ..." -> keep the position index
            faces.append([int(t.split("/")[0]) for t in parts[1:]])
        else:
            skipped[tag] = skipped.get(tag, 0) + 1
    if skipped:
        log.warning("%s: skipped unsupported records %s", path, skipped)
    if not verts:
        raise MeshError(f"{path}: no vertices")
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    nv = len(verts)
    f = np.where(f < 0, f + nv, f - 1)  # OBJ negative indices are relative
    return Mesh(np.array(verts), f).validate()
