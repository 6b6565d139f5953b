"""Exact correspondence refinement from a binarized soft match.

Binarized matches are first verified: a pair survives only if both
binarization directions claim it and the adjacency rows it induces agree
with the target mesh. If three verified pairs form matching triangles,
the match is propagated outward: a vertex next to a matched edge must
map into the shared neighborhood of that edge's images, and excluding
already-used vertices pins it down on a watertight 2-manifold. Every
accepted pair is checked for adjacency consistency against all earlier
pairs, so emitted matches are sound by construction; when propagation
cannot continue the binarized matrix itself is the fallback answer.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correspondence import HardCorrespondence, SoftCorrespondence, _as_array, binarize
from .mesh import (
    MeshError,
    Permutation,
    TriMesh,
    shared_neighbors,
    validate_watertight_manifold,
)

__all__ = [
    "PartialMatch",
    "SeedTriangle",
    "RefinementStats",
    "RefinementResult",
    "verify_matches",
    "find_seed",
    "expand_seed",
    "conditional_refine",
    "write_report",
]

EXACT = "exact"
PARTIAL = "partial"
FALLBACK = "fallback"


@dataclass(frozen=True)
class PartialMatch:
    """Injective partial map from first-mesh to second-mesh vertices."""

    pairs: dict[int, int]
    verified: frozenset

    def __post_init__(self):
        if len(set(self.pairs.values())) != len(self.pairs):
            raise ValueError("partial match must be injective")


@dataclass(frozen=True)
class SeedTriangle:
    """A face of each mesh whose three vertex pairs are verified."""

    t0: tuple[int, int, int]
    t1: tuple[int, int, int]


@dataclass(frozen=True)
class RefinementStats:
    matched: int
    rounds: int
    verified: int = 0


@dataclass(frozen=True)
class RefinementResult:
    """Outcome of refinement.

    ``kind`` is one of ``exact`` (full permutation, conjugation holds
    entry-exactly), ``partial`` (a sound but incomplete pair set) or
    ``fallback`` (the plain binarized matrix). ``pairs`` maps first-mesh
    to second-mesh vertices for the exact/partial kinds.
    """

    kind: str
    stats: RefinementStats
    permutation: Permutation | None = None
    pairs: dict[int, int] | None = None
    fallback: HardCorrespondence | None = None

    @property
    def is_exact(self) -> bool:
        return self.kind == EXACT


def verify_matches(
    g0: TriMesh, g1: TriMesh, h01: HardCorrespondence, h10: HardCorrespondence
) -> PartialMatch:
    """Keep pairs that both directions claim and whose adjacency rows
    check out.

    A pair (u0, u1) survives iff h01 maps u0 to u1, h10 maps u1 back to
    u0, row u1 of H10 A0 H10^T equals row u1 of A1, and row u0 of
    H01 A1 H01^T equals row u0 of A0.
    """
    n = g0.n
    m01 = np.asarray(h01.matrix, dtype=np.int64)
    m10 = np.asarray(h10.matrix, dtype=np.int64)
    if m01.shape != (n, g1.n) or m10.shape != (g1.n, n):
        raise MeshError(
            f"correspondence shapes {m01.shape}/{m10.shape} do not fit meshes {n}/{g1.n}"
        )
    a0 = np.asarray(g0.adjacency, dtype=np.int64)
    a1 = np.asarray(g1.adjacency, dtype=np.int64)
    rows1_ok = (m10 @ a0 @ m10.T == a1).all(axis=1)
    rows0_ok = (m01 @ a1 @ m01.T == a0).all(axis=1)
    claims01 = m01.argmax(axis=1)
    claims10 = m10.argmax(axis=1)
    pairs: dict[int, int] = {}
    for u0 in range(n):
        u1 = int(claims01[u0])
        if claims10[u1] == u0 and rows0_ok[u0] and rows1_ok[u1]:
            pairs[u0] = u1
    return PartialMatch(pairs, frozenset(pairs))


def find_seed(g0: TriMesh, g1: TriMesh, pm: PartialMatch) -> SeedTriangle | None:
    """First face of g0 (in face-list order) whose vertices are all
    verified and whose images form a face of g1."""
    for face in g0.faces:
        a, b, c = face
        if a in pm.verified and b in pm.verified and c in pm.verified:
            image = (pm.pairs[a], pm.pairs[b], pm.pairs[c])
            if g1.has_face(image):
                return SeedTriangle(face, image)
    return None


def _consistent(
    v0: int, v1: int, match01: dict[int, int], match10: dict[int, int],
    g0: TriMesh, g1: TriMesh,
) -> bool:
    # Adding (v0, v1) must map matched edges to edges in both directions.
    for z in g0._neighbor_sets[v0]:
        w = match01.get(z)
        if w is not None and not g1.adjacency[v1, w]:
            return False
    for y in g1._neighbor_sets[v1]:
        z = match10.get(y)
        if z is not None and not g0.adjacency[v0, z]:
            return False
    return True


def expand_seed(g0: TriMesh, g1: TriMesh, seed: SeedTriangle) -> RefinementResult:
    """Grow the seed triangle's match across the mesh.

    A FIFO frontier over first-mesh vertex indices is processed; for
    each frontier vertex its matched adjacent edges are tried in
    lexicographic order and the first edge whose image's shared
    neighborhood (minus used vertices) is a single candidate decides the
    match. An empty candidate set on the smallest edge, a failed
    consistency check, or no uniquely-resolving edge aborts expansion
    with the pairs found so far. The exact outcome additionally requires
    full coverage, entry-exact adjacency conjugation and both meshes
    passing the watertight 2-manifold check.
    """
    if not g0.has_face(seed.t0) or not g1.has_face(seed.t1):
        raise MeshError("seed triangles must be faces of their meshes")
    n = g0.n
    match01 = dict(zip(seed.t0, seed.t1))
    match10 = dict(zip(seed.t1, seed.t0))
    if len(match01) != 3 or len(match10) != 3:
        raise MeshError("seed triangles must pair three distinct vertices")
    used1 = set(seed.t1)

    queue: deque[int] = deque()
    queued = set()

    def enqueue_neighbors(v: int) -> None:
        for u in sorted(g0._neighbor_sets[v]):
            if u not in match01 and u not in queued:
                queue.append(u)
                queued.add(u)

    for v in seed.t0:
        enqueue_neighbors(v)

    rounds = 0
    aborted = False
    while queue and not aborted:
        v0 = queue.popleft()
        queued.discard(v0)
        if v0 in match01:
            continue
        matched_nbrs = sorted(u for u in g0._neighbor_sets[v0] if u in match01)
        edges = [
            (u, w)
            for i, u in enumerate(matched_nbrs)
            for w in matched_nbrs[i + 1:]
            if g0.adjacency[u, w]
        ]
        if not edges:
            continue  # re-enqueued when a neighbor is matched
        chosen = None
        for u, w in edges:
            cands = shared_neighbors(g1, match01[u], match01[w]) - used1
            if len(cands) == 1:
                chosen = next(iter(cands))
                break
            if not cands:
                break
        if chosen is None:
            aborted = True  # inconsistency (empty) or ambiguity (>1 everywhere)
            break
        if not _consistent(v0, chosen, match01, match10, g0, g1):
            aborted = True
            break
        match01[v0] = chosen
        match10[chosen] = v0
        used1.add(chosen)
        rounds += 1
        enqueue_neighbors(v0)

    stats = RefinementStats(matched=len(match01), rounds=rounds)
    if not aborted and len(match01) == n:
        mapping = np.empty(n, dtype=np.intp)
        for u0, u1 in match01.items():
            mapping[u1] = u0
        perm = Permutation(mapping)
        conjugated = np.asarray(g0.adjacency)[np.ix_(mapping, mapping)]
        manifold = (
            validate_watertight_manifold(g0).ok and validate_watertight_manifold(g1).ok
        )
        if manifold and np.array_equal(conjugated, np.asarray(g1.adjacency)):
            return RefinementResult(EXACT, stats, permutation=perm, pairs=dict(match01))
    return RefinementResult(PARTIAL, stats, pairs=dict(match01))


def conditional_refine(g0: TriMesh, g1: TriMesh, soft) -> RefinementResult:
    """Binarize both directions, verify, seed and expand.

    Falls back to the binarized matrix when no fully-verified matching
    triangle exists; a seed that expands only partway yields the partial
    pair set instead.
    """
    s = _as_array(soft)
    h10 = binarize(s)        # rows: second-mesh vertices
    h01 = binarize(s.T)      # rows: first-mesh vertices
    pm = verify_matches(g0, g1, h01, h10)
    seed = find_seed(g0, g1, pm)
    if seed is None:
        stats = RefinementStats(matched=0, rounds=0, verified=len(pm.pairs))
        return RefinementResult(FALLBACK, stats, fallback=h10)
    result = expand_seed(g0, g1, seed)
    stats = RefinementStats(
        matched=result.stats.matched,
        rounds=result.stats.rounds,
        verified=len(pm.pairs),
    )
    return RefinementResult(
        result.kind, stats, permutation=result.permutation, pairs=result.pairs
    )


def write_report(path, soft, result: RefinementResult) -> None:
    """One line per first-mesh vertex: ``i j status`` with status exact,
    partial or fallback; unmatched vertices fall back to their binarized
    claim."""
    s = _as_array(soft)
    claims0 = s.T.argmax(axis=1)  # first-mesh rows -> second-mesh claims
    pairs = result.pairs or {}
    status = EXACT if result.kind == EXACT else PARTIAL
    lines = []
    for i in range(s.shape[1]):
        if i in pairs:
            lines.append(f"{i} {pairs[i]} {status}")
        else:
            lines.append(f"{i} {int(claims0[i])} {FALLBACK}")
    Path(path).write_text("\n".join(lines) + "\n")
