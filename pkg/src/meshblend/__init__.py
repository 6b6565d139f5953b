"""Vertex correspondence and temporal blending for structurally
isomorphic triangle meshes: a learned soft matcher, exact combinatorial
refinement, and a fusion network that synthesizes a mesh at any time t.
"""

__version__ = "0.1.0"

from .mesh import TriMesh, Permutation, MotionSequence  # noqa: F401
from .numeric import Matrix, Tape, backward  # noqa: F401
