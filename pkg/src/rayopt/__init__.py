"""Volumetric semantic 3D reconstruction with exact first-hit ray potentials.

The data cost of a reconstruction is measured where the evidence lives: each
camera ray pays a cost determined by the depth and label of the first
occupied voxel it meets.  These higher-order ray terms are reduced exactly
to pairwise graphs with linearly many edges, solved by QPBO over an integer
max-flow kernel, and extended to multiple labels with expansion moves.
Synthetic scenes, brute-force oracles, and mesh extraction round out the
pipeline.
"""

from . import geometry, maxflow, mesh, oracle, raypbf, scene, solver

__all__ = ["geometry", "maxflow", "mesh", "oracle", "raypbf", "scene", "solver"]
__version__ = "0.1.0"
