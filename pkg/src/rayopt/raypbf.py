"""Reduction of first-hit ray costs to pairwise graph-cut form under QPBO.

A ray over binary voxel variables (1 = free space, 0 = occupied) pays a cost
that depends only on the position of the first 0 along the ray.  Such a cost
profile is rewritten as a telescoping polynomial over prefix products, split
into non-positive product terms using complement variables, and realized as a
pairwise graph over one chain of auxiliary nodes per ray (plus one pendant
auxiliary per positive coefficient).  Shared auxiliaries are merged so the
arc count grows linearly with ray length.  The graph is emitted twice, once
on the variable nodes and mirrored on their complement nodes, which is the
symmetric form required for QPBO persistency; all weights enter doubled so
capacities stay integral.

Variables the two halves agree on after the min cut are part of a global
optimum; the rest are completed by iterated conditional modes.
"""

from dataclasses import dataclass, field

import numpy as np

from .maxflow import SINK, SOURCE, FlowNetwork

ZERO = 0
ONE = 1
UNLABELED = -1


def profile_value(costs, x) -> int:
    """Cost of a binary ray assignment: costs[first index with x == 0], else costs[-1]."""
    costs = np.asarray(costs)
    x = np.asarray(x)
    hits = np.nonzero(x == 0)[0]
    k = int(hits[0]) if hits.size else x.size
    return int(costs[k])


@dataclass
class PolynomialRay:
    """Telescoped form: value(x) = k + sum_i c[i] * prod_{j<=i} x[j]."""

    k: int
    c: np.ndarray

    def value(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        prefix = np.cumprod(x)
        return int(self.k + (self.c * prefix).sum())


@dataclass
class SubmodularRay:
    """Non-negative split of the polynomial coefficients.

    value(x) = offset - sum_i a[i] * prod_{j<=i} x[j]
                      - sum_i b[i] * (1-x[i]) * prod_{j<i} x[j]

    For each depth at most one of a[i], b[i] is nonzero.  f[i] is the total
    weight of deeper terms whose prefix product passes through depth i:
    f[i] = sum_{j>=i} a[j] + sum_{j>i} b[j]; it is non-increasing.
    """

    a: np.ndarray
    b: np.ndarray
    f: np.ndarray
    offset: int

    def value(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        prefix = np.cumprod(x)
        before = np.concatenate([[1], prefix[:-1]])
        return int(self.offset - (self.a * prefix).sum()
                   - (self.b * (1 - x) * before).sum())


def to_polynomial(costs) -> PolynomialRay:
    """Telescope a first-hit cost profile: k = costs[0], c[i] = costs[i+1] - costs[i]."""
    costs = np.asarray(costs, dtype=np.int64)
    if costs.size < 1:
        raise ValueError("profile needs at least the all-free entry")
    return PolynomialRay(int(costs[0]), np.diff(costs))


def _propagate(c):
    """Backward pass pushing positive coefficients toward the ray head.

    g[i] = c[i] + max(g[i+1], 0); positive g becomes a pendant-term weight b,
    non-positive g becomes a chain-term weight a = -g.
    """
    g = np.array(c, dtype=np.int64, copy=True)
    for i in range(g.size - 2, -1, -1):
        if g[i + 1] > 0:
            g[i] += g[i + 1]
    return g


def _split(g, k):
    a = np.where(g <= 0, -g, 0).astype(np.int64)
    b = np.where(g > 0, g, 0).astype(np.int64)
    ab = a + b
    f = ab[::-1].cumsum()[::-1] - b
    offset = int(k) + (int(b[0]) if b.size else 0)
    return SubmodularRay(a, b, f, offset)


def make_submodular(poly: PolynomialRay) -> SubmodularRay:
    """Split polynomial coefficients into the non-negative (a, b, f) form.

    The positive-coefficient rewrite at depth 0 leaves behind a constant,
    which lands in ``offset`` so reported energies stay absolute.
    """
    return _split(_propagate(poly.c), poly.k)


@dataclass
class RayFragment:
    """Record of one emitted ray fragment, for oracle-side verification."""

    var_ids: np.ndarray
    x_nodes: np.ndarray
    xbar_nodes: np.ndarray
    z: np.ndarray        # -1 where the depth has no chain node
    zp: np.ndarray       # -1 where the depth has no pendant node
    zbar: np.ndarray
    zpbar: np.ndarray
    arc_u: np.ndarray
    arc_v: np.ndarray
    arc_cap: np.ndarray
    term_nodes: np.ndarray
    term_ws: np.ndarray
    term_wk: np.ndarray
    const2: int
    sub: SubmodularRay


class QpboProblem:
    """Binary energy over doubled variables, assembled into one flow network.

    Variable v owns the node pair (2v, 2v+1): node 2v carries the variable,
    node 2v+1 its complement.  Every term is emitted on both node families so
    a consistent assignment costs exactly twice the represented energy.
    """

    def __init__(self, variable_count: int, record_fragments: bool = True):
        self.variable_count = variable_count
        self.net = FlowNetwork()
        self.net.add_node(2 * variable_count)
        self.record_fragments = record_fragments
        self.fragments: list[RayFragment] = []
        self._const2 = 0  # constants in doubled-energy units

    def x_node(self, v: int) -> int:
        return 2 * v

    def xbar_node(self, v: int) -> int:
        return 2 * v + 1

    def add_constant(self, value: int) -> None:
        self._const2 += 2 * int(value)

    def add_unary(self, v: int, theta0: int, theta1: int) -> None:
        """Add cost theta0 for v = 0 and theta1 for v = 1."""
        self.net.add_terminal_weights(2 * v, theta0, theta1)
        self.net.add_terminal_weights(2 * v + 1, theta1, theta0)

    def add_pairwise_term(self, u: int, v: int, t00: int, t01: int, t10: int, t11: int) -> None:
        """Add a submodular pairwise table over variables (u, v).

        Decomposed as t00 + (t11-t00)*v + p*u*(1-v) + q*(1-u)*v with
        p = t10 - t00 and q = t01 - t11; a negative p or q is shifted into
        unaries, which submodularity guarantees can happen at most once.
        """
        if t00 + t11 > t01 + t10:
            raise ValueError(
                f"pairwise table ({t00}, {t01}, {t10}, {t11}) is not submodular"
            )
        uc_u = 0
        uc_v = t11 - t00
        p = t10 - t00
        q = t01 - t11
        if p < 0:
            q += p
            uc_u += p
            uc_v -= p
            p = 0
        elif q < 0:
            p += q
            uc_v += q
            uc_u -= q
            q = 0
        self._const2 += 2 * t00
        xu, xv = 2 * u, 2 * v
        bu, bv = xu + 1, xv + 1
        if p:
            self.net.add_pairwise_arc(xu, xv, p, 0)
            self.net.add_pairwise_arc(bv, bu, p, 0)
        if q:
            self.net.add_pairwise_arc(xv, xu, q, 0)
            self.net.add_pairwise_arc(bu, bv, q, 0)
        if uc_u:
            self.add_unary(u, 0, uc_u)
        if uc_v:
            self.add_unary(v, 0, uc_v)

    def emit_ray_fragment(self, ray_vars, sub: SubmodularRay) -> None:
        """Emit the symmetric graph fragment of one ray."""
        ray_vars = np.asarray(ray_vars, dtype=np.int64)
        if ray_vars.size != sub.a.size:
            raise ValueError("ray variable count does not match coefficient count")
        self._emit_batch(
            var_flat=ray_vars,
            var_starts=np.array([0, ray_vars.size], dtype=np.int64),
            a_flat=np.asarray(sub.a, dtype=np.int64),
            b_flat=np.asarray(sub.b, dtype=np.int64),
            f_flat=np.asarray(sub.f, dtype=np.int64),
            offsets=np.array([sub.offset], dtype=np.int64),
        )

    def emit_profiles(self, var_flat, var_starts, cost_flat, cost_starts) -> None:
        """Emit fragments for many rays given ragged profile arrays.

        Ray r owns variables var_flat[var_starts[r]:var_starts[r+1]] and the
        profile cost_flat[cost_starts[r]:cost_starts[r+1]], one entry longer
        than its variable list.
        """
        var_flat = np.asarray(var_flat, dtype=np.int64)
        var_starts = np.asarray(var_starts, dtype=np.int64)
        cost_flat = np.asarray(cost_flat, dtype=np.int64)
        cost_starts = np.asarray(cost_starts, dtype=np.int64)
        nray = var_starts.size - 1
        lens = np.diff(var_starts)
        if not np.array_equal(np.diff(cost_starts), lens + 1):
            raise ValueError("profile lengths must be variable counts plus one")

        # padded 2D view for the backward coefficient propagation
        maxlen = int(lens.max()) if nray else 0
        k = cost_flat[cost_starts[:-1]]
        if maxlen == 0:
            self._const2 += 2 * int(k.sum())
            return
        c2 = np.zeros((nray, maxlen), dtype=np.int64)
        rows = np.repeat(np.arange(nray), lens)
        pos = np.arange(var_flat.size) - np.repeat(var_starts[:-1], lens)
        csrc = np.delete(np.diff(cost_flat), cost_starts[1:-1] - 1)
        c2[rows, pos] = csrc
        g = c2.copy()
        for i in range(maxlen - 2, -1, -1):
            nxt = g[:, i + 1]
            g[:, i] += np.where(nxt > 0, nxt, 0)
        g = g[rows, pos]
        a = np.where(g <= 0, -g, 0)
        b = np.where(g > 0, g, 0)
        ab2 = np.zeros((nray, maxlen), dtype=np.int64)
        ab2[rows, pos] = a + b
        f2 = np.cumsum(ab2[:, ::-1], axis=1)[:, ::-1]
        f = f2[rows, pos] - b
        head_b = np.zeros(nray, dtype=np.int64)
        nonempty = lens > 0
        head_b[nonempty] = b[var_starts[:-1][nonempty]]
        offsets = k + head_b
        self._emit_batch(var_flat, var_starts, a, b, f, offsets)

    def _emit_batch(self, var_flat, var_starts, a_flat, b_flat, f_flat, offsets) -> None:
        net = self.net
        lens = np.diff(var_starts)
        nray = lens.size
        pos = (np.arange(var_flat.size, dtype=np.int64)
               - np.repeat(var_starts[:-1], lens))
        if var_flat.size and (var_flat.min() < 0 or var_flat.max() >= self.variable_count):
            raise IndexError("ray variable id out of range")

        zmask = f_flat > 0
        pmask = b_flat > 0
        nz = int(zmask.sum())
        nzp = int(pmask.sum())
        base = net.add_node(2 * (nz + nzp)).start if (nz + nzp) else net.node_count
        zid = np.where(zmask, np.cumsum(zmask) - 1 + base, -1)
        zpid = np.where(pmask, np.cumsum(pmask) - 1 + base + nz, -1)
        zbid = np.where(zmask, zid + nz + nzp, -1)
        zpbid = np.where(pmask, zpid + nz + nzp, -1)

        xn = 2 * var_flat
        xbn = xn + 1
        prev_z = np.empty_like(zid)
        if prev_z.size:
            prev_z[0] = -1
            prev_z[1:] = zid[:-1]
        prev_zb = np.where(prev_z >= 0, prev_z + nz + nzp, -1)

        au, av, ac = [], [], []

        def arcs(u, v, cap, mask):
            if np.any(mask):
                au.append(u[mask])
                av.append(v[mask])
                ac.append(cap[mask])

        inner = pos > 0
        # chain-weight terms: f*z*(1-x), f*z*(1-z_prev), mirrored
        arcs(zid, xn, f_flat, zmask)
        arcs(xbn, zbid, f_flat, zmask)
        arcs(zid, prev_z, f_flat, zmask & inner)
        arcs(prev_zb, zbid, f_flat, zmask & inner)
        # pendant terms: b*zp*(1-xbar), b*zp*(1-z_prev), mirrored
        arcs(zpid, xbn, b_flat, pmask)
        arcs(xn, zpbid, b_flat, pmask)
        arcs(zpid, prev_z, b_flat, pmask & inner)
        arcs(prev_zb, zpbid, b_flat, pmask & inner)

        if au:
            u = np.concatenate(au)
            v = np.concatenate(av)
            cap = np.concatenate(ac)
            net.add_pairwise_arc_array(u, v, cap, np.zeros_like(cap))

        # unary rewards -a*z and -b*zp, plus their mirrors and constants
        amask = a_flat > 0
        tn, tws, twk = [], [], []
        zeros = np.zeros
        if np.any(amask):
            tn += [zid[amask], zbid[amask]]
            tws += [a_flat[amask], zeros(int(amask.sum()), dtype=np.int64)]
            twk += [zeros(int(amask.sum()), dtype=np.int64), a_flat[amask]]
        if nzp:
            tn += [zpid[pmask], zpbid[pmask]]
            tws += [b_flat[pmask], zeros(nzp, dtype=np.int64)]
            twk += [zeros(nzp, dtype=np.int64), b_flat[pmask]]
        if tn:
            net.add_terminal_weights_array(np.concatenate(tn), np.concatenate(tws),
                                           np.concatenate(twk))

        self._const2 += int(2 * offsets.sum() - 2 * (a_flat.sum() + b_flat.sum()))

        if self.record_fragments:
            ray_of = np.repeat(np.arange(nray), lens)
            if au:
                # every fragment arc touches an auxiliary; attribute by auxiliary id
                aux_ray = np.empty(2 * (nz + nzp), dtype=np.int64)
                aux_ray[zid[zmask] - base] = ray_of[zmask]
                aux_ray[zpid[pmask] - base] = ray_of[pmask]
                aux_ray[nz + nzp:] = aux_ray[:nz + nzp]
                arc_aux = np.where(u >= base, u, v) - base
                arc_ray = aux_ray[arc_aux]
            for r in range(nray):
                s = slice(var_starts[r], var_starts[r + 1])
                sub = SubmodularRay(a_flat[s].copy(), b_flat[s].copy(),
                                    f_flat[s].copy(), int(offsets[r]))
                if au:
                    am = arc_ray == r
                    fa_u, fa_v, fa_c = u[am], v[am], cap[am]
                else:
                    fa_u = fa_v = fa_c = np.zeros(0, dtype=np.int64)
                tmask_z = zmask[s]
                tmask_p = pmask[s]
                term_nodes = []
                term_ws = []
                term_wk = []
                sa, sb = a_flat[s], b_flat[s]
                za, zpa = zid[s], zpid[s]
                zba, zpba = zbid[s], zpbid[s]
                am2 = sa > 0
                if np.any(am2):
                    term_nodes += [za[am2], zba[am2]]
                    term_ws += [sa[am2], np.zeros(int(am2.sum()), dtype=np.int64)]
                    term_wk += [np.zeros(int(am2.sum()), dtype=np.int64), sa[am2]]
                if np.any(tmask_p):
                    term_nodes += [zpa[tmask_p], zpba[tmask_p]]
                    term_ws += [sb[tmask_p], np.zeros(int(tmask_p.sum()), dtype=np.int64)]
                    term_wk += [np.zeros(int(tmask_p.sum()), dtype=np.int64), sb[tmask_p]]
                self.fragments.append(RayFragment(
                    var_ids=var_flat[s].copy(),
                    x_nodes=xn[s].copy(),
                    xbar_nodes=xbn[s].copy(),
                    z=za.copy(), zp=zpa.copy(), zbar=zba.copy(), zpbar=zpba.copy(),
                    arc_u=fa_u, arc_v=fa_v, arc_cap=fa_c,
                    term_nodes=(np.concatenate(term_nodes) if term_nodes
                                else np.zeros(0, dtype=np.int64)),
                    term_ws=(np.concatenate(term_ws) if term_ws
                             else np.zeros(0, dtype=np.int64)),
                    term_wk=(np.concatenate(term_wk) if term_wk
                             else np.zeros(0, dtype=np.int64)),
                    const2=int(2 * offsets[r] - 2 * (sa.sum() + sb.sum())),
                    sub=sub,
                ))

    @property
    def constant2(self) -> int:
        return self._const2

    def qpbo_solve(self):
        """Min-cut the assembled graph; return (partial labeling, lower bound).

        Labeled variables are those whose two nodes land on opposite cut
        sides; they agree with at least one global optimum.  The bound is
        half the cut value plus folded constants and may be half-integral.
        """
        cut = self.net.solve()
        sx = cut.side[0:2 * self.variable_count:2]
        sb = cut.side[1:2 * self.variable_count:2]
        labels = np.full(self.variable_count, UNLABELED, dtype=np.int8)
        labels[(sx == SOURCE) & (sb == SINK)] = ONE
        labels[(sx == SINK) & (sb == SOURCE)] = ZERO
        lower_bound = (cut.min_energy + self._const2) / 2
        return labels, lower_bound


class _CallableEvaluator:
    """Adapter giving flip deltas to a plain full-labeling energy callable."""

    def __init__(self, fn):
        self._fn = fn

    def energy(self, x):
        return self._fn(x)

    def flip_delta(self, x, v):
        e0 = self._fn(x)
        x[v] ^= 1
        e1 = self._fn(x)
        x[v] ^= 1
        return e1 - e0


def icm_complete(partial, energy_eval, initial=None):
    """Complete UNLABELED variables by greedy single-variable descent.

    Variables are scanned in ascending id order, flipping whenever the flip
    strictly decreases the energy, and sweeps repeat until one full sweep
    makes no change.  Labeled variables are never altered.  ``initial``
    provides the starting values of UNLABELED variables (default all ZERO);
    ``energy_eval`` is either a callable on full labelings or an object with
    ``energy`` and ``flip_delta`` methods.
    """
    partial = np.asarray(partial, dtype=np.int8)
    ev = energy_eval if hasattr(energy_eval, "flip_delta") else _CallableEvaluator(energy_eval)
    x = partial.copy()
    free = np.nonzero(partial == UNLABELED)[0]
    if initial is None:
        x[free] = ZERO
    else:
        x[free] = np.asarray(initial, dtype=np.int8)[free]
    reset = getattr(ev, "reset", None)
    if reset is not None:
        reset(x)
    on_flip = getattr(ev, "on_flip", None)
    changed = True
    while changed:
        changed = False
        for v in free:
            if ev.flip_delta(x, int(v)) < 0:
                x[v] ^= 1
                if on_flip is not None:
                    on_flip(x, int(v))
                changed = True
    return x
