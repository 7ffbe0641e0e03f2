"""Brute-force reference implementations used only by tests and acceptance.

Everything here enumerates: full labelings for small instances, and
auxiliary-node assignments for emitted ray fragments.  Enumeration is
vectorized but deliberately naive; nothing in the solve path depends on it.
The fixed-point integer values are the solver's own, so comparisons are
exact with zero tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .raypbf import RayFragment, SubmodularRay
from .solver import EnergyInstance


class OracleBudgetError(ValueError):
    """Requested enumeration exceeds the configured budget."""


@dataclass
class OracleBudget:
    max_binary_vars: int = 14
    max_multilabel_states: int = 20000


def _bits(n: int) -> np.ndarray:
    """All assignments of n binary variables; bit j of row index is variable j."""
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.int64)


def brute_force_binary(inst: EnergyInstance, budget: OracleBudget = OracleBudget()):
    """Exhaustive 2-label optimum: (energy, all optimal labelings)."""
    if len(inst.label_set) != 2:
        raise ValueError("binary oracle needs exactly two labels")
    v = inst.num_voxels
    if v > budget.max_binary_vars:
        raise OracleBudgetError(f"{v} voxels exceeds budget {budget.max_binary_vars}")
    lf = inst.label_set.free_index
    x = _bits(v)
    labelings = np.where(x == 1, lf, 1 - lf).astype(np.int16)
    energies = inst.evaluate_batch(labelings)
    best = energies.min()
    return int(best), labelings[energies == best]


def brute_force_multilabel(inst: EnergyInstance, budget: OracleBudget = OracleBudget()):
    """Exhaustive multi-label optimum: (first optimal labeling, energy)."""
    L = len(inst.label_set)
    v = inst.num_voxels
    states = L**v
    if states > budget.max_multilabel_states:
        raise OracleBudgetError(
            f"{states} labelings exceed budget {budget.max_multilabel_states}")
    idx = np.arange(states, dtype=np.int64)
    labelings = ((idx[:, None] // L**np.arange(v)[None, :]) % L).astype(np.int16)
    energies = inst.evaluate_batch(labelings)
    k = int(np.argmin(energies))
    return labelings[k], int(energies[k])


def _half_minima(frag: RayFragment, half_aux, X):
    """Minimum over one half's auxiliaries of that half's emitted terms.

    The two halves of a fragment share no auxiliary, so each can be
    minimized by independent enumeration.  Returns (minima[A], canon[A])
    over the A given ray assignments, where canon is the energy of the
    canonical auxiliary assignment: chain nodes take the prefix product of
    x, pendant nodes the first-zero indicator, both complemented on the
    mirror half.
    """
    A = X.shape[0]
    n = frag.var_ids.size
    pos = {}
    for arr in half_aux:
        for node in arr[arr >= 0]:
            pos[int(node)] = len(pos)
    M = len(pos)
    all_aux = {int(x) for arr in (frag.z, frag.zp, frag.zbar, frag.zpbar)
               for x in arr[arr >= 0]}
    var_pos = {int(v): j for j, v in enumerate(frag.var_ids)}
    Xb = 1 - X

    def fixed_value(node):
        j = var_pos[node // 2]
        return X[:, j] if node % 2 == 0 else Xb[:, j]

    Z = _bits(M)
    t_aux = np.zeros(1 << M, dtype=np.int64)
    m_av = np.zeros((M, A), dtype=np.int64)   # per-assignment aux-bit coefficients
    const_x = np.zeros(A, dtype=np.int64)
    arcs_here = []
    for u, v, cap in zip(frag.arc_u, frag.arc_v, frag.arc_cap):
        u, v, cap = int(u), int(v), int(cap)
        u_here, v_here = u in pos, v in pos
        if not u_here and not v_here:
            if u not in all_aux and v not in all_aux:
                raise AssertionError("fragment arc with no auxiliary endpoint")
            continue  # belongs to the other half
        arcs_here.append((u, v, cap))
        if u_here and v_here:
            t_aux += cap * Z[:, pos[u]] * (1 - Z[:, pos[v]])
        elif u_here:
            m_av[pos[u]] += cap * (1 - fixed_value(v))
        else:
            val = fixed_value(u)    # cap*val*(1-z) = cap*val - cap*val*z
            const_x += cap * val
            m_av[pos[v]] -= cap * val
    terms_here = []
    for node, ws, wk in zip(frag.term_nodes, frag.term_ws, frag.term_wk):
        node = int(node)
        if node not in pos:
            if node not in all_aux:
                raise AssertionError("fragment terminal on non-auxiliary node")
            continue
        terms_here.append((node, int(ws), int(wk)))
        const_x += int(ws)
        m_av[pos[node]] += int(wk) - int(ws)

    table = t_aux[:, None] + Z @ m_av            # [2^M, A]
    minima = table.min(axis=0) + const_x

    prefix = np.cumprod(X, axis=1)
    before = np.concatenate([np.ones((A, 1), dtype=np.int64), prefix[:, :-1]], axis=1)
    zc = np.zeros((A, M), dtype=np.int64)
    for j in range(n):
        for arr, val in ((frag.z, prefix[:, j]),
                         (frag.zp, Xb[:, j] * before[:, j]),
                         (frag.zbar, 1 - prefix[:, j]),
                         (frag.zpbar, 1 - Xb[:, j] * before[:, j])):
            node = int(arr[j])
            if node >= 0 and node in pos:
                zc[:, pos[node]] = val
    canon = const_x.copy()
    for u, v, cap in arcs_here:
        if u in pos and v in pos:
            canon += cap * zc[:, pos[u]] * (1 - zc[:, pos[v]])
        elif u in pos:
            canon += cap * zc[:, pos[u]] * (1 - fixed_value(v))
        else:
            # the cap*val part of cap*val*(1-z) is already inside const_x
            canon -= cap * fixed_value(u) * zc[:, pos[v]]
    for node, ws, wk in terms_here:
        canon += (wk - ws) * zc[:, pos[node]]
    return minima, canon


def fragment_half_minima(frag: RayFragment):
    """Per-assignment minima of the two independent halves, plus canonical flags.

    Each half is reported in potential units (its share of the folded
    constant restored), so it equals the sum of the ray's product terms and
    can be compared directly against the per-term construction minima.
    """
    n = frag.var_ids.size
    X = _bits(n)
    if n > 10:
        raise OracleBudgetError("fragment enumeration limited to 10 ray variables")
    if (frag.z >= 0).sum() + (frag.zp >= 0).sum() > 20:
        raise OracleBudgetError("fragment enumeration limited to 20 auxiliaries per half")
    m1, c1 = _half_minima(frag, (frag.z, frag.zp), X)
    m2, c2 = _half_minima(frag, (frag.zbar, frag.zpbar), X)
    shift = int(frag.sub.a.sum() + frag.sub.b.sum())
    return m1 - shift, m2 - shift, (c1 == m1), (c2 == m2)


def fragment_min_all(frag: RayFragment):
    """Exact fragment minima over auxiliaries for every ray assignment.

    Returns (minima, canonical_ok) over all 2^n assignments (bit j of the
    row index is the value of ray variable j).  Minima include the
    fragment's constant, so they equal exactly twice the profile value.
    """
    m1, m2, ok1, ok2 = fragment_half_minima(frag)
    return m1 + m2 + 2 * frag.sub.offset, ok1 & ok2


def fragment_min(frag: RayFragment, assignment):
    """Minimum fragment energy over auxiliaries for one assignment."""
    assignment = np.asarray(assignment)
    minima, ok = fragment_min_all(frag)
    idx = int((assignment * (1 << np.arange(assignment.size))).sum())
    return int(minima[idx]), bool(ok[idx])


def unmerged_half_min_all(sub: SubmodularRay):
    """Sum of per-term minima of the separate chain constructions.

    Every product term gets its own auxiliary chain (one auxiliary per
    prefix position), enumerated independently; merging is valid exactly
    when these sums match the shared-chain half minima for all assignments.
    """
    n = sub.a.size
    X = _bits(n)
    A = X.shape[0]
    total = np.zeros(A, dtype=np.int64)
    for i in range(n):
        for w, flip_top in ((int(sub.a[i]), False), (int(sub.b[i]), True)):
            if w == 0:
                continue
            Z = _bits(i + 1)
            top = X[:, i][None, :]
            if flip_top:
                top = 1 - top
            e = -Z[:, [i]] + Z[:, [i]] * (1 - top)
            for j in range(i):
                e = e + Z[:, [j + 1]] * (1 - Z[:, [j]]) + Z[:, [j]] * (1 - X[:, j][None, :])
            total += w * e.min(axis=0)
    return total
