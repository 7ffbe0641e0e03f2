"""Surface extraction from occupancy fields, smoothing, and PLY output.

Multi-label grids collapse to occupancy (anything but the free label) for
surface extraction; the classic 256-case marching cubes table runs on the
binary field at the 0.5 level after padding with one free border layer, so
the result is a closed surface.  Each vertex is colored by the dominant
semantic label among its adjacent occupied voxels.
"""

import struct
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .geometry import VoxelGrid

# label index -> RGB; cycled for label sets larger than the palette
PALETTE = np.array([
    (135, 206, 235),   # sky / free
    (186, 124, 92),    # building
    (72, 140, 70),     # tree
    (150, 140, 100),   # ground
    (160, 80, 160),    # clutter
], dtype=np.uint8)


@dataclass
class TriangleMesh:
    vertices: np.ndarray   # [V, 3] float64 world coordinates
    triangles: np.ndarray  # [F, 3] int32
    colors: np.ndarray     # [V, 3] uint8

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.full((len(self.vertices), 3), 200, dtype=np.uint8)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        t = self.triangles
        if t.size and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2])
                             | (t[:, 0] == t[:, 2])):
            raise ValueError("degenerate triangle with repeated vertex")

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def edge_counts(self):
        """Undirected edge multiplicities; watertight means all exactly 2."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def surface_area(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


def _empty_mesh():
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32),
                        np.zeros((0, 3), dtype=np.uint8))


def marching_cubes(grid: VoxelGrid, iso: float = 0.5,
                   free_index: int = 0) -> TriangleMesh:
    """Extract the occupied/free isosurface of a labeled grid.

    The occupancy field is padded with one free layer so every component
    closes.  Vertices are returned in world units; samples sit at voxel
    centers.
    """
    if grid.labels is None:
        raise ValueError("grid has no labels")
    occ = (grid.label_volume() != free_index).astype(np.float32)
    if not occ.any():
        return _empty_mesh()
    vol = np.pad(occ, 1)
    verts, faces, _, _ = measure.marching_cubes(vol, level=iso, method="lorensen")
    world = grid.origin + (verts - 1.0 + 0.5) * grid.voxel_size

    labels3 = grid.label_volume()
    dims = np.asarray(grid.dims)
    base = np.floor(verts - 1.0 - 0.5).astype(np.int64)
    best = np.zeros(len(verts), dtype=np.int64)
    votes = np.zeros((len(verts), int(labels3.max()) + 1), dtype=np.int32)
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                idx = base + (dx, dy, dz)
                ok = np.all((idx >= 0) & (idx < dims), axis=1)
                lab = labels3[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
                occ_ok = lab != free_index
                rows = np.nonzero(ok)[0][occ_ok]
                votes[rows, lab[occ_ok]] += 1
    votes[:, free_index] = -1  # never color by free space
    best = votes.argmax(axis=1)
    colors = PALETTE[best % len(PALETTE)]
    return TriangleMesh(world, faces.astype(np.int32), colors)


def laplacian_smooth(mesh: TriangleMesh, iterations: int = 3,
                     step: float = 0.5) -> TriangleMesh:
    """Move each vertex toward its neighbor centroid by step, repeatedly.

    Connectivity is untouched; with step < 1 every vertex stays inside the
    bounding box of itself and its one-ring.
    """
    if not 0.0 < step < 1.0:
        raise ValueError("step must lie in (0, 1)")
    if mesh.num_triangles == 0 or iterations == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(),
                            mesh.colors.copy())
    from scipy.sparse import coo_matrix

    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    n = mesh.num_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    verts = mesh.vertices.copy()
    for _ in range(iterations):
        centroid = adj @ verts / deg[:, None]
        isolated = np.asarray(adj.sum(axis=1)).ravel() == 0
        centroid[isolated] = verts[isolated]
        verts = verts + step * (centroid - verts)
    return TriangleMesh(verts, mesh.triangles.copy(), mesh.colors.copy())


def write_ply(mesh: TriangleMesh, path, binary: bool = False) -> None:
    """Write PLY 1.0, ascii or binary little endian, with vertex colors."""
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {mesh.num_vertices}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        f"element face {mesh.num_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
                fh.write(struct.pack("<fffBBB", x, y, z, r, g, b))
            for tri in mesh.triangles:
                fh.write(struct.pack("<Biii", 3, *tri))
        else:
            lines = []
            for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
                lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
            for tri in mesh.triangles:
                lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
            fh.write("".join(lines).encode("ascii"))


def read_ply(path) -> TriangleMesh:
    """Parse the PLY files this module writes (both formats)."""
    with open(path, "rb") as fh:
        data = fh.read()
    head_end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:head_end].decode("ascii").splitlines()
    binary = any("binary_little_endian" in h for h in header)
    nv = nf = 0
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    verts = np.zeros((nv, 3))
    colors = np.zeros((nv, 3), dtype=np.uint8)
    tris = np.zeros((nf, 3), dtype=np.int32)
    if binary:
        off = head_end
        for i in range(nv):
            x, y, z, r, g, b = struct.unpack_from("<fffBBB", data, off)
            verts[i] = (x, y, z)
            colors[i] = (r, g, b)
            off += 15
        for i in range(nf):
            cnt, a, b_, c = struct.unpack_from("<Biii", data, off)
            if cnt != 3:
                raise ValueError("only triangle faces supported")
            tris[i] = (a, b_, c)
            off += 13
    else:
        body = data[head_end:].decode("ascii").splitlines()
        for i in range(nv):
            p = body[i].split()
            verts[i] = [float(c) for c in p[:3]]
            colors[i] = [int(c) for c in p[3:6]]
        for i in range(nf):
            p = body[nv + i].split()
            if p[0] != "3":
                raise ValueError("only triangle faces supported")
            tris[i] = [int(c) for c in p[1:4]]
    return TriangleMesh(verts, tris, colors)
