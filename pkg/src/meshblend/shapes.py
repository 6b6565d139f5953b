"""Watertight 2-manifold base meshes: platonic solids, icospheres, tori."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

__all__ = ["tetrahedron", "octahedron", "icosahedron", "icosphere", "torus_grid"]


def tetrahedron() -> TriMesh:
    verts = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    ) / np.sqrt(3.0)
    faces = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
    return TriMesh(verts, faces)


def octahedron() -> TriMesh:
    verts = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    )
    faces = [
        (0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
        (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5),
    ]
    return TriMesh(verts, faces)


def icosahedron() -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return TriMesh(verts, faces)


def icosphere(level: int) -> TriMesh:
    """Icosahedron with ``level`` midpoint subdivisions, projected to the
    unit sphere. Vertex count is 10 * 4**level + 2."""
    if level < 0:
        raise ValueError("level must be >= 0")
    base = icosahedron()
    verts = [v for v in np.asarray(base.vertices)]
    faces = list(base.faces)
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                idx = len(verts) - 1
                midpoint[key] = idx
            return idx

        split = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            split.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = split
    return TriMesh(np.array(verts), faces)


def torus_grid(nu: int, nv: int, major: float = 1.0, minor: float = 0.4) -> TriMesh:
    """Torus sampled on an nu x nv wrap-around grid, each quad split into
    two triangles."""
    if nu < 3 or nv < 3:
        raise ValueError("torus grid needs nu >= 3 and nv >= 3")
    verts = np.empty((nu * nv, 3))
    for i in range(nu):
        theta = 2.0 * np.pi * i / nu
        for j in range(nv):
            phi = 2.0 * np.pi * j / nv
            w = major + minor * np.cos(phi)
            verts[i * nv + j] = (w * np.cos(theta), w * np.sin(theta), minor * np.sin(phi))
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriMesh(verts, faces)
