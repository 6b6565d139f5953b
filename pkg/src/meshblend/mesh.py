"""Triangle-mesh data model, topology checks, permutations and OBJ I/O.

A mesh is vertices (n x 3), triangular faces and the adjacency they
induce. Vertex indices are 0-based everywhere in memory; the 1-based OBJ
convention is converted at the file boundary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MeshError",
    "MeshFormatError",
    "TriMesh",
    "Permutation",
    "MotionSequence",
    "ValidationReport",
    "build_adjacency",
    "validate_watertight_manifold",
    "apply_permutation",
    "neighbors",
    "shared_neighbors",
    "load_obj",
    "save_obj",
    "load_sequence",
    "save_sequence",
]


class MeshError(ValueError):
    """Invalid mesh data (bad indices, degenerate faces, size mismatch)."""


class MeshFormatError(MeshError):
    """Unparseable or unsupported mesh file content."""


def build_adjacency(faces, n: int) -> np.ndarray:
    """Symmetric binary vertex adjacency induced by a triangle list.

    Entry (i, j) is 1 iff i and j appear together in some face. Raises
    :class:`MeshError` on out-of-range indices or faces with repeated
    vertices.
    """
    adj = np.zeros((n, n), dtype=np.uint8)
    for k, face in enumerate(faces):
        if len(face) != 3:
            raise MeshError(f"face {k} has {len(face)} vertices, expected 3")
        a, b, c = (int(v) for v in face)
        for v in (a, b, c):
            if not 0 <= v < n:
                raise MeshError(f"face {k} references vertex {v}, valid range is [0, {n})")
        if a == b or b == c or a == c:
            raise MeshError(f"face {k} is degenerate: ({a}, {b}, {c})")
        adj[a, b] = adj[b, a] = 1
        adj[b, c] = adj[c, b] = 1
        adj[a, c] = adj[c, a] = 1
    return adj


class TriMesh:
    """Immutable triangular mesh: vertices, faces and derived adjacency."""

    __slots__ = ("vertices", "faces", "adjacency", "_neighbor_sets", "_face_set")

    def __init__(self, vertices, faces):
        verts = np.array(vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError(f"vertices must be n x 3, got shape {verts.shape}")
        if not np.isfinite(verts).all():
            raise MeshError("vertices contain NaN or Inf")
        face_tuples = tuple(tuple(int(v) for v in f) for f in faces)
        adj = build_adjacency(face_tuples, verts.shape[0])
        self._init_fields(verts, face_tuples, adj)

    def _init_fields(self, verts, face_tuples, adj):
        verts = np.ascontiguousarray(verts)
        verts.flags.writeable = False
        adj.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", face_tuples)
        object.__setattr__(self, "adjacency", adj)
        nbrs = tuple(frozenset(np.flatnonzero(adj[v]).tolist()) for v in range(verts.shape[0]))
        object.__setattr__(self, "_neighbor_sets", nbrs)
        object.__setattr__(self, "_face_set", frozenset(frozenset(f) for f in face_tuples))

    def with_vertices(self, vertices) -> "TriMesh":
        """Same connectivity with replaced coordinates (adjacency reused)."""
        verts = np.array(vertices, dtype=np.float64)
        if verts.shape != self.vertices.shape:
            raise MeshError(f"expected shape {self.vertices.shape}, got {verts.shape}")
        if not np.isfinite(verts).all():
            raise MeshError("vertices contain NaN or Inf")
        out = object.__new__(TriMesh)
        adj = np.asarray(self.adjacency)
        out._init_fields(verts, self.faces, adj.copy())
        return out

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def has_face(self, tri) -> bool:
        """Membership of an unordered vertex triple in the face set."""
        return frozenset(tri) in self._face_set

    def __setattr__(self, name, value):
        raise AttributeError("TriMesh is immutable")

    def __repr__(self) -> str:
        return f"TriMesh(n={self.n}, faces={self.n_faces})"


def neighbors(mesh: TriMesh, v: int) -> frozenset:
    """Vertices adjacent to ``v``."""
    if not 0 <= v < mesh.n:
        raise MeshError(f"vertex {v} out of range [0, {mesh.n})")
    return mesh._neighbor_sets[v]


def shared_neighbors(mesh: TriMesh, u: int, v: int) -> frozenset:
    """Vertices adjacent to both ``u`` and ``v``."""
    return neighbors(mesh, u) & neighbors(mesh, v)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the watertight 2-manifold check."""

    ok: bool
    boundary_edges: tuple = ()
    overshared_edges: tuple = ()
    nonmanifold_vertices: tuple = ()

    def summary(self) -> str:
        if self.ok:
            return "watertight 2-manifold: pass"
        parts = ["watertight 2-manifold: fail"]
        if self.boundary_edges:
            parts.append(f"  boundary edges: {list(self.boundary_edges)}")
        if self.overshared_edges:
            parts.append(f"  edges in >2 faces: {list(self.overshared_edges)}")
        if self.nonmanifold_vertices:
            parts.append(f"  non-manifold vertices: {list(self.nonmanifold_vertices)}")
        return "\n".join(parts)


def validate_watertight_manifold(mesh: TriMesh) -> ValidationReport:
    """Check that every edge borders exactly 2 faces and every vertex's
    incident faces form one closed fan."""
    edge_count: dict[tuple[int, int], int] = {}
    for f in mesh.faces:
        for u, v in ((f[0], f[1]), (f[1], f[2]), (f[0], f[2])):
            key = (u, v) if u < v else (v, u)
            edge_count[key] = edge_count.get(key, 0) + 1
    boundary = tuple(sorted(e for e, c in edge_count.items() if c == 1))
    overshared = tuple(sorted(e for e, c in edge_count.items() if c > 2))

    # Vertex link: neighbors of v joined by the opposite edges of v's
    # incident faces. A single closed fan is a single cycle.
    link_edges: list[list[tuple[int, int]]] = [[] for _ in range(mesh.n)]
    for f in mesh.faces:
        a, b, c = f
        link_edges[a].append((b, c))
        link_edges[b].append((a, c))
        link_edges[c].append((a, b))
    bad_vertices = []
    for v in range(mesh.n):
        edges = link_edges[v]
        if not edges:
            bad_vertices.append(v)
            continue
        deg: dict[int, int] = {}
        adj_link: dict[int, list[int]] = {}
        for x, y in edges:
            deg[x] = deg.get(x, 0) + 1
            deg[y] = deg.get(y, 0) + 1
            adj_link.setdefault(x, []).append(y)
            adj_link.setdefault(y, []).append(x)
        if any(d != 2 for d in deg.values()):
            bad_vertices.append(v)
            continue
        start = next(iter(adj_link))
        seen = {start}
        stack = [start]
        while stack:
            for w in adj_link[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(deg):
            bad_vertices.append(v)
    ok = not boundary and not overshared and not bad_vertices
    return ValidationReport(ok, boundary, overshared, tuple(bad_vertices))


@dataclass(frozen=True)
class Permutation:
    """Bijection on vertex indices.

    ``mapping[i] = j`` means vertex ``i`` of the permuted mesh is vertex
    ``j`` of the original, so the matrix form ``P`` (row i one-hot at
    ``mapping[i]``) satisfies ``V' = P V`` and ``A' = P A P^T``.
    """

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.intp)
        n = m.shape[0]
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(n)):
            raise MeshError("mapping must be a bijection on [0, n)")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))

    @property
    def size(self) -> int:
        return self.mapping.shape[0]

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.size)
        return Permutation(inv)

    def matrix(self) -> np.ndarray:
        return np.eye(self.size)[self.mapping]


def apply_permutation(mesh: TriMesh, p: Permutation) -> TriMesh:
    """Relabel vertices: same point set, conjugated adjacency A' = P A P^T."""
    if p.size != mesh.n:
        raise MeshError(f"permutation size {p.size} != vertex count {mesh.n}")
    inv = p.inverse().mapping
    new_vertices = mesh.vertices[p.mapping]
    new_faces = [(int(inv[a]), int(inv[b]), int(inv[c])) for a, b, c in mesh.faces]
    return TriMesh(new_vertices, new_faces)


@dataclass
class MotionSequence:
    """Ordered frames sharing one connectivity."""

    frames: list[np.ndarray]
    faces: tuple
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise MeshError("a sequence needs at least one frame")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise MeshError("all frames must share one vertex count")
        if not self.frame_indices:
            self.frame_indices = list(range(len(self.frames)))
        if len(self.frame_indices) != len(self.frames):
            raise MeshError("frame_indices length must match frames")
        self._template = TriMesh(self.frames[0], self.faces)

    def __len__(self) -> int:
        return len(self.frames)

    def mesh(self, k: int) -> TriMesh:
        return self._template.with_vertices(self.frames[k])


# ---------------------------------------------------------------------------
# OBJ subset: `v x y z` and triangular `f` records, 1-based indices,
# `/`-suffixed attributes ignored.

_FACE_REF = re.compile(r"^-?\d+")


def load_obj(path) -> TriMesh:
    path = Path(path)
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "v":
                if len(tokens) != 4:
                    raise MeshFormatError(
                        f"{path.name}:{lineno}: vertex record needs 3 coordinates, got {len(tokens) - 1}"
                    )
                try:
                    vertices.append([float(t) for t in tokens[1:]])
                except ValueError as exc:
                    raise MeshFormatError(f"{path.name}:{lineno}: bad vertex coordinate") from exc
            elif kind == "f":
                refs = tokens[1:]
                if len(refs) != 3:
                    raise MeshFormatError(
                        f"{path.name}:{lineno}: non-triangular face with {len(refs)} vertices"
                    )
                idx = []
                for ref in refs:
                    m = _FACE_REF.match(ref.split("/")[0])
                    if not m:
                        raise MeshFormatError(f"{path.name}:{lineno}: bad face reference {ref!r}")
                    one_based = int(m.group(0))
                    if one_based < 1:
                        raise MeshFormatError(
                            f"{path.name}:{lineno}: face index {one_based} must be >= 1"
                        )
                    idx.append(one_based - 1)
                faces.append(tuple(idx))
                face_lines.append(lineno)
            # other record kinds (vn, vt, s, o, g, usemtl, ...) are ignored
    n = len(vertices)
    for face, lineno in zip(faces, face_lines):
        for v in face:
            if v >= n:
                raise MeshFormatError(
                    f"{path.name}:{lineno}: face references vertex {v + 1}, file has {n}"
                )
    try:
        return TriMesh(np.array(vertices, dtype=np.float64).reshape(n, 3), faces)
    except MeshError as exc:
        raise MeshFormatError(f"{path.name}: {exc}") from exc


def save_obj(mesh: TriMesh, path) -> None:
    """Write vertices at 9 significant digits and 1-based triangle faces."""
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Sequence directory format: frame_%05d.obj plus sequence.meta (frame
# count on the first line, then one frame index per line).


def save_sequence(seq: MotionSequence, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = [str(len(seq))] + [str(i) for i in seq.frame_indices]
    (directory / "sequence.meta").write_text("\n".join(meta) + "\n")
    for k, idx in enumerate(seq.frame_indices):
        save_obj(seq.mesh(k), directory / f"frame_{idx:05d}.obj")


def load_sequence(directory) -> MotionSequence:
    directory = Path(directory)
    meta_path = directory / "sequence.meta"
    if not meta_path.exists():
        raise MeshFormatError(f"{directory}: missing sequence.meta")
    lines = [ln.strip() for ln in meta_path.read_text().splitlines() if ln.strip()]
    try:
        count = int(lines[0])
        indices = [int(x) for x in lines[1:]]
    except (ValueError, IndexError) as exc:
        raise MeshFormatError(f"{meta_path}: malformed") from exc
    if len(indices) != count:
        raise MeshFormatError(f"{meta_path}: frame count {count} != {len(indices)} indices")
    frames = []
    faces = None
    for idx in indices:
        m = load_obj(directory / f"frame_{idx:05d}.obj")
        if faces is None:
            faces = m.faces
        elif m.faces != faces:
            raise MeshFormatError(f"{directory}: frame {idx} changes connectivity")
        frames.append(np.asarray(m.vertices))
    return MotionSequence(frames, faces, indices)
