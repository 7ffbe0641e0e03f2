"""Exact s-t max-flow / min-cut over sparse directed networks with integer capacities.

Networks are built incrementally from pairwise arcs and per-node terminal
weights.  Construction accepts signed weights; a normalization pass before
solving folds negative weights into terminal capacities and a constant
offset, so the solver itself only ever sees non-negative capacities.  The
min-cut kernel is scipy's Dinic implementation (an augmenting-path solver
with exact integer arithmetic); this module owns the energy bookkeeping
around it.

Conventions:
  * a node is on the SOURCE side iff it cannot reach the sink in the final
    residual graph (the maximal-source-side minimum cut),
  * ``w_source`` is the capacity of the arc source->node, i.e. the penalty
    paid when the node ends up on the SINK side,
  * ``w_sink`` is the capacity node->sink, paid on the SOURCE side.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

SOURCE = 1
SINK = 0

# Conservative bound on the sum of absolute capacities; keeps every partial
# sum the solver can form well inside int64.
_CAP_LIMIT = 2**61


class CapacityOverflowError(OverflowError):
    """Total capacity too large for exact int64 arithmetic."""


class NonSubmodularArcError(ValueError):
    """An antiparallel arc pair accumulated a negative combined capacity."""


@dataclass
class CutResult:
    """Minimum cut: flow value, side assignment, and the folded constant."""

    flow_value: int
    side: np.ndarray  # uint8, SOURCE or SINK per node
    constant_offset: int

    @property
    def min_energy(self) -> int:
        """Cut cost in the original signed-weight units."""
        return self.flow_value + self.constant_offset


class FlowNetwork:
    """Sparse directed flow network with accumulating arc and terminal weights."""

    def __init__(self):
        self.node_count = 0
        # scalar staging buffers plus bulk chunks, concatenated at solve time
        self._arc_u = []
        self._arc_v = []
        self._arc_cap = []
        self._arc_rev = []
        self._arc_chunks = []
        self._term_node = []
        self._term_ws = []
        self._term_wk = []
        self._term_chunks = []
        self._arc_records = 0

    @property
    def arc_count(self) -> int:
        """Number of arc-pair records added (duplicates not merged)."""
        return self._arc_records

    def add_node(self, n: int) -> range:
        """Allocate n consecutive node ids and return them as a range."""
        if n < 0:
            raise ValueError("node count must be non-negative")
        start = self.node_count
        self.node_count += n
        return range(start, self.node_count)

    def _check_ids(self, u, v):
        if u == v:
            raise ValueError(f"self-arc on node {u}")
        if not (0 <= u < self.node_count and 0 <= v < self.node_count):
            raise IndexError(f"arc ({u}, {v}) references unallocated node ids")

    def add_pairwise_arc(self, u: int, v: int, cap_uv: int, cap_vu: int) -> None:
        """Record an antiparallel arc pair; repeated pairs accumulate additively."""
        self._check_ids(u, v)
        self._arc_u.append(u)
        self._arc_v.append(v)
        self._arc_cap.append(cap_uv)
        self._arc_rev.append(cap_vu)
        self._arc_records += 1

    def add_pairwise_arc_array(self, u, v, cap_uv, cap_vu) -> None:
        """Bulk variant of add_pairwise_arc over equal-length integer arrays."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if u.size == 0:
            return
        if np.any(u == v):
            raise ValueError("self-arc in bulk arc insertion")
        hi = max(int(u.max()), int(v.max()))
        lo = min(int(u.min()), int(v.min()))
        if lo < 0 or hi >= self.node_count:
            raise IndexError("bulk arc references unallocated node ids")
        cap_uv = np.broadcast_to(np.asarray(cap_uv, dtype=np.int64), u.shape)
        cap_vu = np.broadcast_to(np.asarray(cap_vu, dtype=np.int64), u.shape)
        self._arc_chunks.append((u, v, cap_uv.copy(), cap_vu.copy()))
        self._arc_records += u.size

    def add_terminal_weights(self, u: int, w_source: int, w_sink: int) -> None:
        """Accumulate signed terminal weights on node u."""
        if not (0 <= u < self.node_count):
            raise IndexError(f"terminal weight on unallocated node {u}")
        self._term_node.append(u)
        self._term_ws.append(w_source)
        self._term_wk.append(w_sink)

    def add_terminal_weights_array(self, nodes, w_source, w_sink) -> None:
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size == 0:
            return
        if nodes.min() < 0 or nodes.max() >= self.node_count:
            raise IndexError("bulk terminal weights reference unallocated node ids")
        ws = np.broadcast_to(np.asarray(w_source, dtype=np.int64), nodes.shape)
        wk = np.broadcast_to(np.asarray(w_sink, dtype=np.int64), nodes.shape)
        self._term_chunks.append((nodes, ws.copy(), wk.copy()))

    def _gather_terminals(self):
        ws = np.zeros(self.node_count, dtype=np.int64)
        wk = np.zeros(self.node_count, dtype=np.int64)
        if self._term_node:
            idx = np.asarray(self._term_node, dtype=np.int64)
            np.add.at(ws, idx, np.asarray(self._term_ws, dtype=np.int64))
            np.add.at(wk, idx, np.asarray(self._term_wk, dtype=np.int64))
        for nodes, cws, cwk in self._term_chunks:
            np.add.at(ws, nodes, cws)
            np.add.at(wk, nodes, cwk)
        return ws, wk

    def _gather_arcs(self):
        us, vs, cs = [], [], []
        if self._arc_u:
            u = np.asarray(self._arc_u, dtype=np.int64)
            v = np.asarray(self._arc_v, dtype=np.int64)
            us += [u, v]
            vs += [v, u]
            cs += [np.asarray(self._arc_cap, dtype=np.int64),
                   np.asarray(self._arc_rev, dtype=np.int64)]
        for u, v, cap, rev in self._arc_chunks:
            us += [u, v]
            vs += [v, u]
            cs += [cap, rev]
        if not us:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z
        return np.concatenate(us), np.concatenate(vs), np.concatenate(cs)

    def normalized_terminals(self):
        """Terminal weights after folding, as (w_source, w_sink, constant)."""
        ws, wk = self._gather_terminals()
        m = np.minimum(ws, wk)
        return ws - m, wk - m, int(m.sum())

    def solve(self) -> CutResult:
        """Solve min cut exactly; the network is left intact and resolvable."""
        n = self.node_count
        ws, wk = self._gather_terminals()
        du, dv, dc = self._gather_arcs()

        # rough magnitude guard; float accumulation only gates, never computes
        total = float(np.abs(ws).sum()) + float(np.abs(wk).sum())
        if dc.size:
            total += float(np.abs(dc).sum())
        if total > _CAP_LIMIT:
            raise CapacityOverflowError(
                f"total absolute capacity {total:.3g} exceeds the exact-arithmetic bound"
            )

        constant = 0
        if dc.size:
            # merge duplicate directed arcs
            A = coo_matrix((dc, (du, dv)), shape=(n, n)).tocsr()
            A.sum_duplicates()
            A = A.tocoo()
            du, dv, dc = A.row.astype(np.int64), A.col.astype(np.int64), A.data
            # fold negative directed capacities into the reverse arc and
            # terminals:  c*u*(1-v) == c*(1-u)*v + c*u - c*v
            neg = dc < 0
            if np.any(neg):
                np.add.at(wk, du[neg], dc[neg])
                np.add.at(wk, dv[neg], -dc[neg])
                du2 = np.concatenate([du[~neg], dv[neg]])
                dv2 = np.concatenate([dv[~neg], du[neg]])
                dc2 = np.concatenate([dc[~neg], dc[neg]])
                A = coo_matrix((dc2, (du2, dv2)), shape=(n, n)).tocsr()
                A.sum_duplicates()
                A = A.tocoo()
                du, dv, dc = A.row.astype(np.int64), A.col.astype(np.int64), A.data
                if np.any(dc < 0):
                    bad = int(np.argmax(dc < 0))
                    raise NonSubmodularArcError(
                        f"arc pair ({du[bad]}, {dv[bad]}) has negative combined "
                        "capacity and is not graph-representable"
                    )
            keep = dc > 0
            du, dv, dc = du[keep], dv[keep], dc[keep]

        # fold min(w_source, w_sink) per node into the constant
        m = np.minimum(ws, wk)
        constant += int(m.sum())
        ws = ws - m
        wk = wk - m

        s_id, t_id = n, n + 1
        src_nodes = np.nonzero(ws > 0)[0]
        snk_nodes = np.nonzero(wk > 0)[0]
        rows = np.concatenate([du, np.full(src_nodes.size, s_id, dtype=np.int64), snk_nodes])
        cols = np.concatenate([dv, src_nodes, np.full(snk_nodes.size, t_id, dtype=np.int64)])
        caps = np.concatenate([dc, ws[src_nodes], wk[snk_nodes]])

        if caps.size == 0:
            side = np.full(n, SOURCE, dtype=np.uint8)
            return CutResult(0, side, constant)

        graph = coo_matrix((caps, (rows, cols)), shape=(n + 2, n + 2)).tocsr()
        result = maximum_flow(graph, s_id, t_id)

        # SINK side = nodes that still reach t in the residual graph
        residual = (graph - result.flow).T.tocsr()
        residual.data = np.maximum(residual.data, 0)
        residual.eliminate_zeros()
        reach = breadth_first_order(residual, t_id, directed=True,
                                    return_predecessors=False)
        side = np.full(n + 2, SOURCE, dtype=np.uint8)
        side[reach] = SINK
        if side[s_id] == SINK:
            raise AssertionError("source reaches sink in residual graph; flow not maximal")
        return CutResult(int(result.flow_value), side[:n], constant)


def solve(net: FlowNetwork) -> CutResult:
    return net.solve()
