"""Synthetic ground-truth scenes, rendered observations, and ray cost tables.

Scenes stand in for real capture: a labeled voxel grid inside the unit cube,
viewed by a ring of pinhole cameras.  Rendering traces every pixel through
the ground truth and produces per-pixel depth matches (the true first-hit
depth, optionally jittered, plus optional spurious secondary matches with
decaying confidence) and a semantic cost vector, the negative log of a
confusion-smoothed one-hot on the true class, with the free-space label
playing the sky role for rays that hit nothing.

Ray costs follow the quadratic-footprint model: a voxel at distance d along
a ray costs (lambda_sem * C(label) + lambda_dep * C(d)) * d^2, converted to
fixed-point integers shared with the solver.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import PinholeCamera, RayBatch, VoxelGrid, cast_rays
from .solver import LabelSet

# confusion probability floor so noiseless semantic costs stay finite
_MIN_CONFUSION = 1e-6

PRESETS = ("box", "wall_with_hole", "thin_column", "two_planes")


@dataclass
class CostParams:
    """Weights and noise controls for observation rendering and ray costs."""

    lambda_sem: float = 1.0
    lambda_dep: float = 1.0
    delta: float = 0.0625            # depth tolerance, world units
    matches_per_pixel: int = 1
    depth_sigma: float = 0.0         # jitter on the true depth, world units
    confusion: float = 0.0           # semantic smoothing probability
    seed: int = 0
    fixed_point_scale: int = 10_000

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.lambda_sem < 0 or self.lambda_dep < 0:
            raise ValueError("cost weights must be non-negative")
        if not 1 <= self.matches_per_pixel <= 3:
            raise ValueError("matches_per_pixel must be in [1, 3]")
        if self.fixed_point_scale < 1:
            raise ValueError("fixed_point_scale must be a positive integer")


@dataclass
class SyntheticScene:
    preset: str
    ground_truth: VoxelGrid
    label_set: LabelSet
    cameras: list
    max_depth: float
    meta: dict = field(default_factory=dict)


def _ring_cameras(n_cameras, image_size, seed, radius=2.0, focal_factor=0.75):
    rng = np.random.default_rng([seed, 0xC0FFEE])
    phase = rng.uniform(0.0, 2 * np.pi)
    heights = 0.5 + rng.uniform(-0.25, 0.25, n_cameras)
    target = np.array([0.5, 0.5, 0.5])
    cams = []
    for k in range(n_cameras):
        ang = phase + 2 * np.pi * k / n_cameras
        pos = target + np.array([radius * np.cos(ang), radius * np.sin(ang),
                                 heights[k] - 0.5])
        cams.append(PinholeCamera.look_at(pos, target,
                                          focal=focal_factor * image_size,
                                          width=image_size, height=image_size))
    return cams, radius


def build_scene(preset: str, resolution: int, seed: int = 0, n_cameras: int = 8,
                image_size: int | None = None) -> SyntheticScene:
    """Deterministic ground-truth world for (preset, resolution, seed).

    Presets probe the classic failure modes of unary approximations: a solid
    box, a thin wall with a square opening, a one-voxel column, and two
    offset planes with occlusion between them.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    res = int(resolution)
    if res < 8:
        raise ValueError("resolution must be at least 8")
    if image_size is None:
        image_size = res
    vol = np.zeros((res, res, res), dtype=np.int16)
    meta = {}
    labels = ("sky", "building")
    if preset == "box":
        lo, hi = res // 4, res // 4 + res // 2
        vol[lo:hi, lo:hi, lo:hi] = 1
    elif preset == "wall_with_hole":
        x = res // 2
        vol[x, :, :] = 1
        h = max(2, round(6 * res / 32))
        y0 = (res - h) // 2
        vol[x, y0:y0 + h, y0:y0 + h] = 0
        hole = np.zeros((res, res, res), dtype=bool)
        hole[x, y0:y0 + h, y0:y0 + h] = True
        meta["hole_voxels"] = np.nonzero(hole.ravel())[0]
        meta["wall_axis"] = 0
    elif preset == "thin_column":
        h = max(3, round(20 * res / 32))
        z0 = (res - h) // 2
        vol[res // 2, res // 2, z0:z0 + h] = 1
    else:  # two_planes
        labels = ("sky", "building", "ground")
        x1, x2 = res // 3, 2 * res // 3
        vol[x1, : (2 * res) // 3, :] = 1
        vol[x2, :, :] = 2
    label_set = LabelSet(labels, "sky")
    grid = VoxelGrid((res, res, res), voxel_size=1.0 / res,
                     origin=np.zeros(3), labels=vol.ravel())
    cams, radius = _ring_cameras(n_cameras, image_size, seed)
    return SyntheticScene(preset, grid, label_set, cams,
                          max_depth=radius + 2.0, meta=meta)


@dataclass
class PixelObservation:
    """Semantic cost vector and depth matches of one pixel."""

    sem_cost: np.ndarray
    matches: list  # [(depth, weight)], best first, weights non-increasing


@dataclass
class Observations:
    """Vectorized per-pixel observations of one camera."""

    camera_id: int
    rays: RayBatch
    hit: np.ndarray          # [P] bool
    true_depth: np.ndarray   # [P], nan where miss
    true_class: np.ndarray   # [P] label index, free where miss
    sem_cost: np.ndarray     # [P, L]
    match_d: np.ndarray      # [P, M], nan padded
    match_w: np.ndarray      # [P, M], nan padded
    width: int
    height: int

    def pixel(self, u: int, v: int) -> PixelObservation:
        p = v * self.width + u
        good = ~np.isnan(self.match_d[p])
        matches = list(zip(self.match_d[p][good], self.match_w[p][good]))
        return PixelObservation(self.sem_cost[p].copy(), matches)


def render_observations(scene: SyntheticScene, cam_index: int,
                        params: CostParams) -> Observations:
    """Trace all pixels of one camera through the ground truth.

    Deterministic for (scene, cam_index, params): the noise stream is seeded
    from (params.seed, cam_index) alone.
    """
    cam = scene.cameras[cam_index]
    grid = scene.ground_truth
    W, H = cam.width, cam.height
    uu, vv = np.meshgrid(np.arange(W), np.arange(H), indexing="xy")
    pixels = np.stack([uu.ravel() + 0.5, vv.ravel() + 0.5], axis=1)
    rays = cast_rays(cam, pixels, grid, scene.max_depth, camera_id=cam_index)
    P = rays.num_rays
    L = len(scene.label_set)
    lf = scene.label_set.free_index

    lens = rays.lengths()
    maxlen = int(lens.max()) if P else 0
    occ2 = np.zeros((P, maxlen + 1), dtype=bool)
    rows = np.repeat(np.arange(P), lens)
    pos = np.arange(rays.voxel_ids.size) - np.repeat(rays.starts[:-1], lens)
    occ2[rows, pos] = grid.labels[rays.voxel_ids] != lf
    occ2[np.arange(P), lens] = True
    k = np.argmax(occ2, axis=1)
    hit = k < lens

    true_depth = np.full(P, np.nan)
    true_class = np.full(P, lf, dtype=np.int16)
    d2 = np.zeros((P, maxlen))
    d2[rows, pos] = rays.entry_depths
    hp = np.nonzero(hit)[0]
    true_depth[hp] = d2[hp, k[hp]]
    id2 = np.zeros((P, maxlen), dtype=np.int64)
    id2[rows, pos] = rays.voxel_ids
    true_class[hp] = grid.labels[id2[hp, k[hp]]]

    p_eff = min(max(params.confusion, _MIN_CONFUSION), 1.0)
    sem = np.full((P, L), -np.log(p_eff / L))
    sem[np.arange(P), true_class] = -np.log(1.0 - p_eff + p_eff / L)

    rng = np.random.default_rng([params.seed, cam_index])
    M = params.matches_per_pixel
    match_d = np.full((P, M), np.nan)
    match_w = np.full((P, M), np.nan)
    jitter = rng.standard_normal(P) * params.depth_sigma
    match_d[hp, 0] = np.maximum(true_depth[hp] + jitter[hp],
                                0.1 * grid.voxel_size)
    match_w[hp, 0] = 1.0
    for n in range(1, M):
        match_d[hp, n] = rng.uniform(0.05, 0.95, P)[hp] * scene.max_depth
        match_w[hp, n] = match_w[hp, n - 1] * rng.uniform(0.3, 0.9, P)[hp]
    return Observations(cam_index, rays, hit, true_depth, true_class, sem,
                        match_d, match_w, W, H)


def _depth_cost_arrays(match_d, match_w, d, delta):
    """C(d) for entry depths d [..]: most confident in-tolerance contribution."""
    ad = np.abs(d[..., None] - match_d)
    contrib = np.where(np.isnan(ad) | (ad > delta), 0.0,
                       np.nan_to_num(match_w) * (-1.0 + ad / delta))
    return contrib.min(axis=-1) if match_d.shape[-1] else np.zeros(d.shape)


def depth_cost(obs: PixelObservation, d, params: CostParams):
    """Depth cost of one pixel at distance d (scalar or array)."""
    d = np.asarray(d, dtype=np.float64)
    if not obs.matches:
        return np.zeros(d.shape) if d.shape else 0.0
    md = np.array([m[0] for m in obs.matches])
    mw = np.array([m[1] for m in obs.matches])
    out = _depth_cost_arrays(md, mw, d, params.delta)
    return out if d.shape else float(out)


def ray_cost_table(ray, obs: PixelObservation, params: CostParams,
                   label_set: LabelSet) -> np.ndarray:
    """Fixed-point cost table [N+1, L] of one nonempty ray.

    Row i costs first-hitting voxel i with each non-free label; the final
    row holds the all-free cost, the sky cost weighted by the last voxel's
    squared depth.  Cells outside those roles are zero and never read.
    """
    depths = np.asarray(ray.entry_depths, dtype=np.float64)
    n = depths.size
    if n == 0:
        raise ValueError("ray cost table needs a nonempty ray")
    lf = label_set.free_index
    cd = depth_cost(obs, depths, params)
    phi = (params.lambda_sem * obs.sem_cost[None, :]
           + params.lambda_dep * cd[:, None]) * (depths ** 2)[:, None]
    table = np.zeros((n + 1, len(label_set)))
    table[:n] = phi
    table[:n, lf] = 0.0
    table[n, lf] = params.lambda_sem * obs.sem_cost[lf] * depths[-1] ** 2
    return np.rint(table * params.fixed_point_scale).astype(np.int64)


def build_cost_tables(obs: Observations, params: CostParams, label_set: LabelSet):
    """Vectorized ray_cost_table over every nonempty ray of one camera.

    Returns (ids_flat, var_starts, tables_flat, table_starts) in the flat
    ragged layout the energy instance consumes; empty rays are dropped.
    """
    rays = obs.rays
    lens = rays.lengths()
    keep = np.nonzero(lens > 0)[0]
    lk = lens[keep]
    nk = keep.size
    L = len(label_set)
    lf = label_set.free_index
    if nk == 0:
        return (np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64),
                np.zeros((0, L), dtype=np.int64), np.zeros(1, dtype=np.int64))

    # empty rays own no flat entries, so the kept entries are all of them
    ids_flat = rays.voxel_ids
    depths = rays.entry_depths
    ray_of = np.repeat(np.arange(nk), lk)
    var_starts = np.zeros(nk + 1, dtype=np.int64)
    np.cumsum(lk, out=var_starts[1:])

    cd = _depth_cost_arrays(obs.match_d[keep][ray_of],
                            obs.match_w[keep][ray_of], depths, params.delta)
    sem = obs.sem_cost[keep][ray_of]
    phi = (params.lambda_sem * sem + params.lambda_dep * cd[:, None]) \
        * (depths ** 2)[:, None]
    phi[:, lf] = 0.0

    table_starts = np.zeros(nk + 1, dtype=np.int64)
    np.cumsum(lk + 1, out=table_starts[1:])
    tables = np.zeros((int(table_starts[-1]), L))
    pos = np.arange(ids_flat.size) - np.repeat(var_starts[:-1], lk)
    tables[table_starts[:-1][ray_of] + pos] = phi
    last_depth = depths[var_starts[1:] - 1]
    tables[table_starts[1:] - 1, lf] = (params.lambda_sem
                                        * obs.sem_cost[keep][:, lf]
                                        * last_depth ** 2)
    tables = np.rint(tables * params.fixed_point_scale).astype(np.int64)
    return ids_flat, var_starts, tables, table_starts


def compute_metrics(result_labels, truth_labels, label_set: LabelSet) -> dict:
    """Occupancy IoU, per-class IoU and voxel accuracy of a reconstruction."""
    result_labels = np.asarray(result_labels)
    truth_labels = np.asarray(truth_labels)
    if result_labels.shape != truth_labels.shape:
        raise ValueError("label fields must have the same shape")
    lf = label_set.free_index

    def iou(a, b):
        union = int(np.logical_or(a, b).sum())
        if union == 0:
            return 1.0
        return float(np.logical_and(a, b).sum() / union)

    metrics = {
        "occupancy_iou": iou(result_labels != lf, truth_labels != lf),
        "voxel_accuracy": float((result_labels == truth_labels).mean()),
        "class_iou": {name: iou(result_labels == i, truth_labels == i)
                      for i, name in enumerate(label_set.labels)},
    }
    return metrics
