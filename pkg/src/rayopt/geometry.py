"""Voxel grids, pinhole cameras, ray casting, and regularizer edge generation.

Ray casting is a vectorized 3D-DDA walk: all rays advance one cell crossing
per iteration, recording each visited cell and the distance at which the ray
enters it.  Ray origins are displaced by 1e-9 * voxel_size on every world
axis before traversal so rays lying exactly on cell faces, edges or corners
are broken deterministically.
"""

from dataclasses import dataclass, field

import numpy as np

TIE_EPS = 1e-9


@dataclass
class VoxelGrid:
    """Dense axis-aligned voxel lattice.

    Voxel ids are row-major over (ix, iy, iz): id = (ix * ny + iy) * nz + iz.
    """

    dims: tuple
    voxel_size: float = 1.0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    labels: np.ndarray | None = None  # flat per-voxel label indices

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ValueError(f"grid dims must all be >= 1, got {self.dims}")
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.num_voxels,):
                raise ValueError("labels must be flat with one entry per voxel")

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_id(self, ix, iy, iz):
        nx, ny, nz = self.dims
        return (np.asarray(ix) * ny + np.asarray(iy)) * nz + np.asarray(iz)

    def voxel_index(self, vid):
        nx, ny, nz = self.dims
        vid = np.asarray(vid)
        return vid // (ny * nz), (vid // nz) % ny, vid % nz

    def centers(self):
        """World coordinates of all voxel centers, flat [num_voxels, 3]."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def label_volume(self):
        nx, ny, nz = self.dims
        return self.labels.reshape(nx, ny, nz)


@dataclass
class PinholeCamera:
    """World-from-camera pose with simple pinhole intrinsics (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # 3x3, columns are camera axes in world coordinates
    center: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (deviation {err:.2e})")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), focal=None,
                width=64, height=64):
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward = forward / np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(forward @ up) > 0.999 * np.linalg.norm(up):
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.column_stack([right, down, forward])
        if focal is None:
            focal = 0.75 * width
        return cls(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                   rotation=rot, center=position, width=width, height=height)

    def ray_directions(self, pixels):
        """Unit world directions through the given pixel coordinates [P, 2]."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d_cam = np.stack([(pixels[:, 0] - self.cx) / self.fx,
                          (pixels[:, 1] - self.cy) / self.fy,
                          np.ones(len(pixels))], axis=1)
        d = d_cam @ self.rotation.T
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("degenerate zero-length ray direction")
        return d / norms


@dataclass
class CastRay:
    """One ray's ordered voxel visit list with per-voxel entry depths."""

    camera_id: int
    pixel: tuple
    voxel_ids: np.ndarray
    entry_depths: np.ndarray

    def __len__(self):
        return self.voxel_ids.size


@dataclass
class RayBatch:
    """Ragged bundle of rays: ray r owns flat[starts[r]:starts[r+1]]."""

    voxel_ids: np.ndarray     # flat int64
    entry_depths: np.ndarray  # flat float64
    starts: np.ndarray        # [num_rays + 1]
    pixels: np.ndarray        # [num_rays, 2]
    camera_id: int = 0

    @property
    def num_rays(self) -> int:
        return self.starts.size - 1

    def lengths(self):
        return np.diff(self.starts)

    def ray(self, r: int) -> CastRay:
        s, e = self.starts[r], self.starts[r + 1]
        return CastRay(self.camera_id, tuple(self.pixels[r]),
                       self.voxel_ids[s:e], self.entry_depths[s:e])


def cast_rays(cam: PinholeCamera, pixels, grid: VoxelGrid, max_depth: float,
              camera_id: int = 0) -> RayBatch:
    """Trace many rays through the grid at once; rays missing it come back empty.

    Entry depths are measured from the camera center to the point where the
    ray enters each voxel, clamped at 0 when the camera sits inside it.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if np.any(pixels[:, 0] < 0) or np.any(pixels[:, 0] > cam.width) \
            or np.any(pixels[:, 1] < 0) or np.any(pixels[:, 1] > cam.height):
        raise ValueError("pixel outside image bounds")
    dirs = cam.ray_directions(pixels)
    h = grid.voxel_size
    origin = cam.center + TIE_EPS * h  # tie-breaking nudge on every axis
    dims = np.asarray(grid.dims)
    P = len(pixels)

    lo = grid.origin
    hi = grid.origin + dims * h
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origin) * inv
        tb = (hi - origin) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    # axes with zero direction: inside the slab or miss entirely
    par = dirs == 0.0
    inside = (origin >= lo) & (origin <= hi)
    tmin[par] = np.where(np.broadcast_to(inside, par.shape)[par], -np.inf, np.inf)
    tmax[par] = np.where(np.broadcast_to(inside, par.shape)[par], np.inf, -np.inf)
    t0 = tmin.max(axis=1)
    t1 = tmax.min(axis=1)
    t_enter = np.maximum(t0, 0.0)
    t_end = np.minimum(t1, max_depth)
    active = t_end > t_enter

    # starting cell: step a hair inside so boundary points land in the cell
    p0 = origin + dirs * (t_enter + TIE_EPS * h)[:, None]
    cell = np.clip(np.floor((p0 - lo) / h).astype(np.int64), 0, dims - 1)
    step = np.where(dirs > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.abs(h * inv)
        boundary = lo + (cell + (step > 0)) * h
        t_next = (boundary - origin) * inv
    t_next[par] = np.inf
    t_delta[par] = np.inf

    max_steps = int(dims.sum()) + 3
    out_ids = []
    out_t = []
    out_ray = []
    t_cur = t_enter.copy()
    ny, nz = dims[1], dims[2]
    ray_idx = np.arange(P)
    for _ in range(max_steps):
        if not np.any(active):
            break
        act = np.nonzero(active)[0]
        c = cell[act]
        out_ids.append((c[:, 0] * ny + c[:, 1]) * nz + c[:, 2])
        out_t.append(t_cur[act])
        out_ray.append(act)
        axis = np.argmin(t_next[act], axis=1)
        tn = t_next[act, axis]
        cell[act, axis] += step[act, axis]
        t_next[act, axis] += t_delta[act, axis]
        t_cur[act] = tn
        done = tn >= t_end[act]
        moved = cell[act, axis]
        done |= (moved < 0) | (moved >= dims[axis])
        active[act[done]] = False

    if out_ids:
        flat_ids = np.concatenate(out_ids)
        flat_t = np.concatenate(out_t)
        flat_ray = np.concatenate(out_ray)
        order = np.argsort(flat_ray, kind="stable")
        flat_ids = flat_ids[order]
        flat_t = flat_t[order]
        counts = np.bincount(flat_ray, minlength=P)
    else:
        flat_ids = np.zeros(0, dtype=np.int64)
        flat_t = np.zeros(0)
        counts = np.zeros(P, dtype=np.int64)
    starts = np.zeros(P + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return RayBatch(flat_ids, flat_t, starts, pixels, camera_id)


def cast_ray(cam: PinholeCamera, pixel, grid: VoxelGrid, max_depth: float,
             camera_id: int = 0) -> CastRay:
    """Trace a single ray; thin wrapper over the batched traversal."""
    batch = cast_rays(cam, [pixel], grid, max_depth, camera_id)
    return batch.ray(0)


def pairwise_edges(grid: VoxelGrid, weight: float, neighborhood: int = 6):
    """Neighbor edges with boundary-area weights, each unordered pair once.

    The 6-neighborhood uses face adjacency with weight * voxel_size^2 per
    edge.  The optional 26-neighborhood adds edge and corner diagonals with
    weights divided by the neighbor offset length, for experiments on
    discretization quality.
    """
    if neighborhood not in (6, 26):
        raise ValueError("neighborhood must be 6 or 26")
    nx, ny, nz = grid.dims
    area = weight * grid.voxel_size ** 2
    ids = np.arange(grid.num_voxels, dtype=np.int64).reshape(nx, ny, nz)
    if neighborhood == 6:
        offsets = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    else:
        # one representative per +/- offset pair: the lexicographically positive 13
        offsets = [(dx, dy, dz)
                   for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                   if (dx, dy, dz) > (0, 0, 0)]
    us, vs, ws = [], [], []
    for dx, dy, dz in offsets:
        sl_a = (slice(max(0, -dx), nx - max(0, dx)),
                slice(max(0, -dy), ny - max(0, dy)),
                slice(max(0, -dz), nz - max(0, dz)))
        sl_b = (slice(max(0, dx), nx - max(0, -dx)),
                slice(max(0, dy), ny - max(0, -dy)),
                slice(max(0, dz), nz - max(0, -dz)))
        a = ids[sl_a].ravel()
        b = ids[sl_b].ravel()
        if a.size == 0:
            continue
        us.append(a)
        vs.append(b)
        norm = float(np.sqrt(dx * dx + dy * dy + dz * dz))
        ws.append(np.full(a.size, area / norm))
    if not us:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ws)
