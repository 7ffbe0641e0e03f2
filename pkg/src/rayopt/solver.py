"""Full energy assembly and minimization over voxel labelings.

The energy is a sum of per-ray first-hit costs and pairwise neighbor terms.
With two labels the problem maps directly onto binary ray profiles (value 1
meaning free space) and is solved by one QPBO cut plus ICM completion.  With
more labels, expansion moves are solved the same way after projecting every
ray table onto the move's binary transformation variables.
"""

from dataclasses import dataclass, field

import numpy as np

from . import raypbf
from .geometry import VoxelGrid
from .raypbf import ONE, UNLABELED, ZERO, QpboProblem, icm_complete, profile_value


@dataclass(frozen=True)
class LabelSet:
    """Semantic labels with one designated free-space label."""

    labels: tuple
    free_space: str

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")
        if self.free_space not in self.labels:
            raise ValueError(f"free-space label {self.free_space!r} not in label set")

    def __len__(self):
        return len(self.labels)

    @property
    def free_index(self) -> int:
        return self.labels.index(self.free_space)

    def index(self, name: str) -> int:
        return self.labels.index(name)


def potts_metric(num_labels: int) -> np.ndarray:
    return (1 - np.eye(num_labels, dtype=np.int64))


def _check_metric(metric: np.ndarray):
    L = metric.shape[0]
    if metric.shape != (L, L):
        raise ValueError("label metric must be square")
    if np.any(np.diag(metric) != 0):
        raise ValueError("label metric must have zero diagonal")
    if np.any(metric != metric.T):
        raise ValueError("label metric must be symmetric")
    if np.any(metric < 0):
        raise ValueError("label metric must be non-negative")
    for b in range(L):
        # triangle inequality d(a,c) <= d(a,b) + d(b,c), needed so every
        # expansion projection stays submodular
        if np.any(metric > metric[:, [b]] + metric[[b], :]):
            raise ValueError("label metric violates the triangle inequality")


class EnergyInstance:
    """Immutable energy over a voxel grid: rays with cost tables plus edges.

    Each ray is (voxel_ids, table) where table is an int64 array of shape
    [N+1, L]: row i holds the cost of voxel i being the first hit with each
    non-free label, and row N holds the all-free cost in the free-space
    column.  Edge terms are w_e * metric[l_i, l_j]; only label metrics
    (symmetric, zero diagonal, triangle inequality) are accepted, which keeps
    every expansion projection submodular.
    """

    def __init__(self, grid: VoxelGrid, label_set: LabelSet, rays,
                 edges=None, metric=None):
        L = len(label_set)
        ids_list, tables = [], []
        for ids, table in rays:
            ids = np.asarray(ids, dtype=np.int64)
            table = np.asarray(table)
            if not np.issubdtype(table.dtype, np.integer):
                raise ValueError("cost tables must be integer fixed-point")
            if table.shape != (ids.size + 1, L):
                raise ValueError("ray table must have shape [len(ray)+1, num_labels]")
            ids_list.append(ids)
            tables.append(table.astype(np.int64))
        lens = np.array([i.size for i in ids_list], dtype=np.int64)
        nray = len(ids_list)
        ray_starts = np.zeros(nray + 1, dtype=np.int64)
        np.cumsum(lens, out=ray_starts[1:])
        table_starts = np.zeros(nray + 1, dtype=np.int64)
        np.cumsum(lens + 1, out=table_starts[1:])
        self._init_flat(
            grid, label_set,
            np.concatenate(ids_list) if ids_list else np.zeros(0, dtype=np.int64),
            ray_starts,
            np.concatenate(tables, axis=0) if tables
            else np.zeros((0, L), dtype=np.int64),
            table_starts, edges, metric)

    @classmethod
    def from_flat(cls, grid: VoxelGrid, label_set: LabelSet, ray_ids, ray_starts,
                  tables, table_starts, edges=None, metric=None):
        """Build from ragged flat arrays (the layout build_cost_tables emits)."""
        self = cls.__new__(cls)
        self._init_flat(grid, label_set, np.asarray(ray_ids, dtype=np.int64),
                        np.asarray(ray_starts, dtype=np.int64),
                        np.asarray(tables), np.asarray(table_starts, dtype=np.int64),
                        edges, metric)
        return self

    def _init_flat(self, grid, label_set, ray_ids, ray_starts, tables,
                   table_starts, edges, metric):
        self.grid = grid
        self.label_set = label_set
        L = len(label_set)
        self.num_voxels = grid.num_voxels
        self.metric = (potts_metric(L) if metric is None
                       else np.asarray(metric, dtype=np.int64))
        _check_metric(self.metric)
        if self.metric.shape[0] != L:
            raise ValueError("metric size does not match label count")
        if not np.issubdtype(tables.dtype, np.integer):
            raise ValueError("cost tables must be integer fixed-point")
        self.num_rays = ray_starts.size - 1
        if not np.array_equal(np.diff(table_starts), np.diff(ray_starts) + 1):
            raise ValueError("table segments must be ray segments plus one row")
        if tables.shape != (int(table_starts[-1]), L):
            raise ValueError("flat table block has the wrong shape")
        if ray_ids.size and (ray_ids.min() < 0 or ray_ids.max() >= self.num_voxels):
            raise ValueError("ray voxel id outside the grid")
        if ray_ids.size:
            ray_of = np.repeat(np.arange(self.num_rays), np.diff(ray_starts))
            order = np.lexsort((ray_ids, ray_of))
            same = (np.diff(ray_of[order]) == 0) & (np.diff(ray_ids[order]) == 0)
            if np.any(same):
                raise ValueError("ray visits a voxel twice")
        self.ray_ids = ray_ids
        self.ray_starts = ray_starts
        self.tables = tables.astype(np.int64, copy=False)
        self.table_starts = table_starts

        if edges is None:
            e = np.zeros(0, dtype=np.int64)
            self.edge_u, self.edge_v, self.edge_w = e, e.copy(), e.copy()
        else:
            u, v, w = edges
            self.edge_u = np.asarray(u, dtype=np.int64)
            self.edge_v = np.asarray(v, dtype=np.int64)
            self.edge_w = np.asarray(w, dtype=np.int64)
            if np.any(self.edge_w < 0):
                raise ValueError("edge weights must be non-negative")
            if self.edge_u.size and (min(self.edge_u.min(), self.edge_v.min()) < 0
                                     or max(self.edge_u.max(), self.edge_v.max())
                                     >= self.num_voxels):
                raise ValueError("edge endpoint outside the grid")

    def ray(self, r: int):
        s, e = self.ray_starts[r], self.ray_starts[r + 1]
        ts, te = self.table_starts[r], self.table_starts[r + 1]
        return self.ray_ids[s:e], self.tables[ts:te]

    def ray_length(self, r: int) -> int:
        return int(self.ray_starts[r + 1] - self.ray_starts[r])

    def evaluate(self, labeling) -> int:
        return int(self.evaluate_batch(np.asarray(labeling)[None, :])[0])

    def evaluate_batch(self, labelings) -> np.ndarray:
        """Energies of many complete labelings [S, num_voxels]; the reference
        evaluator every solver result is checked against."""
        labelings = np.asarray(labelings)
        S = labelings.shape[0]
        lf = self.label_set.free_index
        total = np.zeros(S, dtype=np.int64)
        if self.num_rays:
            lab = labelings[:, self.ray_ids]              # [S, total_entries]
            occ = lab != lf
            lens = np.diff(self.ray_starts)
            maxlen = int(lens.max()) if lens.size else 0
            rows = np.repeat(np.arange(self.num_rays), lens)
            pos = np.arange(self.ray_ids.size) - np.repeat(self.ray_starts[:-1], lens)
            occ2 = np.zeros((S, self.num_rays, maxlen + 1), dtype=bool)
            occ2[:, rows, pos] = occ
            occ2[:, np.arange(self.num_rays), lens] = True  # sentinel: miss
            K = np.argmax(occ2, axis=2)                    # [S, num_rays]
            lab2 = np.full((S, self.num_rays, maxlen + 1), lf, dtype=labelings.dtype)
            lab2[:, rows, pos] = lab
            hit_lab = np.take_along_axis(lab2, K[:, :, None], axis=2)[:, :, 0]
            row_idx = self.table_starts[:-1][None, :] + K
            total += self.tables[row_idx, hit_lab].sum(axis=1)
        if self.edge_u.size:
            lu = labelings[:, self.edge_u]
            lv = labelings[:, self.edge_v]
            total += (self.metric[lu, lv] * self.edge_w[None, :]).sum(axis=1)
        return total

    def binary_profiles(self):
        """Flat first-hit profiles for the 2-label case (x = 1 means free)."""
        if len(self.label_set) != 2:
            raise ValueError("binary profiles need exactly two labels")
        lf = self.label_set.free_index
        occ = 1 - lf
        prof = self.tables[:, occ].copy()
        prof[self.table_starts[1:] - 1] = self.tables[self.table_starts[1:] - 1, lf]
        return prof, self.table_starts.copy()


def first_hit(ray_labels, free_index: int) -> int:
    """Index of the first non-free voxel along the ray, or N if none."""
    ray_labels = np.asarray(ray_labels)
    hits = np.nonzero(ray_labels != free_index)[0]
    return int(hits[0]) if hits.size else ray_labels.size


def evaluate_energy(inst: EnergyInstance, labeling) -> int:
    return inst.evaluate(labeling)


class _BinaryDeltaState:
    """Incremental flip-delta evaluator for 2-label instances under ICM.

    Per-ray occupancy is a bitmask (bit d set when the voxel at depth d is
    occupied), so the first hit after a flip is one lowest-set-bit query.
    """

    def __init__(self, inst: EnergyInstance, profiles, starts):
        self.inst = inst
        self.starts = starts
        self.profiles = profiles
        order = np.argsort(inst.ray_ids, kind="stable")
        self.inc_ray = np.repeat(np.arange(inst.num_rays),
                                 np.diff(inst.ray_starts))[order].astype(np.int64)
        self.inc_pos = (np.arange(inst.ray_ids.size)
                        - np.repeat(inst.ray_starts[:-1], np.diff(inst.ray_starts)))
        self.inc_pos = self.inc_pos[order].astype(np.int64)
        self.inc_starts = np.zeros(inst.num_voxels + 1, dtype=np.int64)
        np.cumsum(np.bincount(inst.ray_ids, minlength=inst.num_voxels),
                  out=self.inc_starts[1:])
        # undirected neighbor adjacency with binary Potts-equivalent weights
        lf = inst.label_set.free_index
        wbin = inst.edge_w * inst.metric[lf, 1 - lf]
        u = np.concatenate([inst.edge_u, inst.edge_v])
        v = np.concatenate([inst.edge_v, inst.edge_u])
        w = np.concatenate([wbin, wbin])
        order = np.argsort(u, kind="stable")
        self.adj_v = v[order]
        self.adj_w = w[order]
        self.adj_starts = np.zeros(inst.num_voxels + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=inst.num_voxels), out=self.adj_starts[1:])
        self.masks = None

    def reset(self, x):
        occ = (x[self.inst.ray_ids] == 0).astype(np.uint8)
        self.masks = []
        self.kcur = []
        st = self.inst.ray_starts
        for r in range(self.inst.num_rays):
            bits = occ[st[r]:st[r + 1]]
            m = 0
            for d in np.nonzero(bits)[0]:
                m |= 1 << int(d)
            self.masks.append(m)
            self.kcur.append(self._lsb(m, int(st[r + 1] - st[r])))

    @staticmethod
    def _lsb(mask, n):
        return (mask & -mask).bit_length() - 1 if mask else n

    def flip_delta(self, x, v):
        delta = 0
        st, pr = self.starts, self.profiles
        for i in range(self.inc_starts[v], self.inc_starts[v + 1]):
            r = self.inc_ray[i]
            d = int(self.inc_pos[i])
            m = self.masks[r]
            nm = m ^ (1 << d)
            n = int(st[r + 1] - st[r]) - 1
            delta += int(pr[st[r] + self._lsb(nm, n)]) - int(pr[st[r] + self.kcur[r]])
        xv = x[v]
        for i in range(self.adj_starts[v], self.adj_starts[v + 1]):
            u = self.adj_v[i]
            if x[u] == xv:
                delta += int(self.adj_w[i])
            else:
                delta -= int(self.adj_w[i])
        return delta

    def on_flip(self, x, v):
        for i in range(self.inc_starts[v], self.inc_starts[v + 1]):
            r = self.inc_ray[i]
            self.masks[r] ^= 1 << int(self.inc_pos[i])
            n = int(self.starts[r + 1] - self.starts[r]) - 1
            self.kcur[r] = self._lsb(self.masks[r], n)


@dataclass
class BinaryResult:
    labeling: np.ndarray
    energy: int
    lower_bound: float
    partial: np.ndarray = None  # QPBO partial labeling in x-space (1 = free)
    stats: dict = field(default_factory=dict)


def solve_binary(inst: EnergyInstance) -> BinaryResult:
    """Solve a 2-label instance through the ray reduction.

    Builds first-hit profiles (value 1 mapping to the free-space label),
    emits the symmetric graph, cuts it, and completes any unlabeled voxels
    by ICM started from all-free (voxels no term touches stay free space).
    """
    if len(inst.label_set) != 2:
        raise ValueError("solve_binary requires exactly two labels")
    lf = inst.label_set.free_index
    occ = 1 - lf
    prof, starts = inst.binary_profiles()
    var_starts = inst.ray_starts

    prob = QpboProblem(inst.num_voxels, record_fragments=False)
    prob.emit_profiles(inst.ray_ids, var_starts, prof, starts)
    if inst.edge_u.size:
        w = inst.edge_w * inst.metric[lf, occ]
        xu, xv = 2 * inst.edge_u, 2 * inst.edge_v
        prob.net.add_pairwise_arc_array(xu, xv, w, w)
        prob.net.add_pairwise_arc_array(xu + 1, xv + 1, w, w)

    partial, lower_bound = prob.qpbo_solve()
    n_unlabeled = int((partial == UNLABELED).sum())
    state = _BinaryDeltaState(inst, prof, starts)
    x = icm_complete(partial, state, initial=np.ones(inst.num_voxels, dtype=np.int8))
    labeling = np.where(x == 1, lf, occ).astype(np.int16)
    energy = inst.evaluate(labeling)
    stats = {
        "nodes": prob.net.node_count,
        "arcs": prob.net.arc_count,
        "unlabeled": n_unlabeled,
    }
    return BinaryResult(labeling, energy, float(lower_bound), partial, stats)


def project_freespace_expansion(ray_ids, table, current_labels, free_index):
    """Binary profile of one ray for a free-space move.

    Move variables are the currently occupied voxels in depth order; value 0
    keeps the voxel (making it the first hit), value 1 clears it.  The final
    profile entry is the all-free cost.
    """
    ray_ids = np.asarray(ray_ids)
    cur = np.asarray(current_labels)[ray_ids]
    keep = np.nonzero(cur != free_index)[0]
    profile = np.empty(keep.size + 1, dtype=np.int64)
    profile[:-1] = table[keep, cur[keep]]
    profile[-1] = table[len(ray_ids), free_index]
    return ray_ids[keep], profile


def project_label_expansion(alpha: int, ray_ids, table, current_labels, free_index):
    """Binary profile of one ray for an expansion of label alpha.

    Move variables are the prefix up to and including the current first hit
    (the whole ray when there is none); value 0 switches the voxel to alpha,
    which can only move the first hit forward.  The final entry is the ray's
    current contribution.
    """
    ray_ids = np.asarray(ray_ids)
    cur = np.asarray(current_labels)[ray_ids]
    k = first_hit(cur, free_index)
    n = ray_ids.size
    m = min(k + 1, n)
    profile = np.empty(m + 1, dtype=np.int64)
    profile[:m] = table[np.arange(m), alpha]
    profile[m] = table[k, cur[k]] if k < n else table[n, free_index]
    return ray_ids[:m], profile


def _move_tables(inst, current_labels, alpha, freespace):
    """Projected 2x2 pairwise tables for every edge under the move."""
    lu = current_labels[inst.edge_u]
    lv = current_labels[inst.edge_v]
    m = inst.metric
    if freespace:
        lf = inst.label_set.free_index
        t00 = m[lu, lv]
        t01 = m[lu, np.full_like(lv, lf)]
        t10 = m[np.full_like(lu, lf), lv]
        t11 = np.zeros_like(t00)
    else:
        t00 = np.zeros_like(lu, dtype=np.int64)
        t01 = m[np.full_like(lu, alpha), lv]
        t10 = m[lu, np.full_like(lv, alpha)]
        t11 = m[lu, lv]
    w = inst.edge_w
    return t00 * w, t01 * w, t10 * w, t11 * w


class _MoveEnergy:
    """Exact move energy over transformation vectors, for ICM completion."""

    def __init__(self, ray_vars, ray_profiles, edges, tables):
        self.ray_vars = ray_vars
        self.ray_profiles = ray_profiles
        self.edges = edges
        self.tables = tables

    def __call__(self, t):
        e = 0
        for ids, prof in zip(self.ray_vars, self.ray_profiles):
            e += profile_value(prof, t[ids])
        eu, ev = self.edges
        t00, t01, t10, t11 = self.tables
        tu = t[eu]
        tv = t[ev]
        e += int((t00 * ((tu == 0) & (tv == 0)) + t01 * ((tu == 0) & (tv == 1))
                  + t10 * ((tu == 1) & (tv == 0)) + t11 * ((tu == 1) & (tv == 1))).sum())
        return e


@dataclass
class AlphaResult:
    labeling: np.ndarray
    energy: int
    trace: list
    moves: list
    stats: dict = field(default_factory=dict)


def alpha_expansion(inst: EnergyInstance, max_cycles: int = 50,
                    label_order_seed=None) -> AlphaResult:
    """Expansion-move minimization for 3 or more labels.

    Starts all free space and cycles labels (free space first, then
    declaration order, optionally shuffled by seed).  Each move is solved by
    the same QPBO reduction on the projected profiles; a move is committed
    only if the exactly evaluated energy strictly decreases, so the trace is
    non-increasing.  Stops after a full cycle without a commit.
    """
    if len(inst.label_set) < 2:
        raise ValueError("alpha expansion needs at least two labels")
    lf = inst.label_set.free_index
    order = [lf] + [l for l in range(len(inst.label_set)) if l != lf]
    if label_order_seed is not None:
        rng = np.random.default_rng(label_order_seed)
        rest = order[1:]
        rng.shuffle(rest)
        order = [lf] + rest

    current = np.full(inst.num_voxels, lf, dtype=np.int16)
    energy = inst.evaluate(current)
    trace = [energy]
    moves = []
    total_nodes = total_arcs = 0

    for _ in range(max_cycles):
        improved = False
        for alpha in order:
            freespace = alpha == lf
            ray_vars, ray_profiles = [], []
            prob = QpboProblem(inst.num_voxels, record_fragments=False)
            for r in range(inst.num_rays):
                ids, table = inst.ray(r)
                if ids.size == 0:
                    prob.add_constant(int(table[0, lf]))
                    continue
                if freespace:
                    mids, profile = project_freespace_expansion(
                        ids, table, current, lf)
                else:
                    mids, profile = project_label_expansion(
                        alpha, ids, table, current, lf)
                ray_vars.append(mids)
                ray_profiles.append(profile)
                if mids.size == 0:
                    prob.add_constant(int(profile[0]))
                else:
                    sub = raypbf.make_submodular(raypbf.to_polynomial(profile))
                    prob.emit_ray_fragment(mids, sub)
            tabs = _move_tables(inst, current, alpha, freespace)
            for i in range(inst.edge_u.size):
                prob.add_pairwise_term(int(inst.edge_u[i]), int(inst.edge_v[i]),
                                       int(tabs[0][i]), int(tabs[1][i]),
                                       int(tabs[2][i]), int(tabs[3][i]))
            partial, _ = prob.qpbo_solve()
            total_nodes += prob.net.node_count
            total_arcs += prob.net.arc_count
            no_change = ZERO if freespace else ONE
            start = np.full(inst.num_voxels, no_change, dtype=np.int8)
            mv = _MoveEnergy(ray_vars, ray_profiles,
                             (inst.edge_u, inst.edge_v), tabs)
            t = icm_complete(partial, mv, initial=start)
            if freespace:
                candidate = np.where(t == 1, lf, current).astype(np.int16)
            else:
                candidate = np.where(t == 0, alpha, current).astype(np.int16)
            cand_energy = inst.evaluate(candidate)
            committed = cand_energy < energy
            if committed:
                current = candidate
                energy = cand_energy
                improved = True
            moves.append((alpha, committed))
            trace.append(energy)
        if not improved:
            break
    stats = {"nodes": total_nodes, "arcs": total_arcs, "moves": len(moves)}
    return AlphaResult(current, energy, trace, moves, stats)
