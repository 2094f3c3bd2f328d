"""JIT-compiled graph search kernels.

Distances are negated inner products; all orderings are lexicographic on
(distance, node id) so ties resolve to the lower id deterministically.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _dot(vectors, i, q):
    s = 0.0
    for j in range(q.shape[0]):
        s += vectors[i, j] * q[j]
    return s


@njit(cache=True, inline="always")
def _lt(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True)
def _push_min(hd, hi, size, d, i):
    hd[size] = d
    hi[size] = i
    pos = size
    while pos > 0:
        parent = (pos - 1) // 2
        if _lt(hd[pos], hi[pos], hd[parent], hi[parent]):
            hd[pos], hd[parent] = hd[parent], hd[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            pos = parent
        else:
            break


@njit(cache=True)
def _pop_min(hd, hi, size):
    d = hd[0]
    i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and _lt(hd[left], hi[left], hd[best], hi[best]):
            best = left
        if right < size and _lt(hd[right], hi[right], hd[best], hi[best]):
            best = right
        if best == pos:
            break
        hd[pos], hd[best] = hd[best], hd[pos]
        hi[pos], hi[best] = hi[best], hi[pos]
        pos = best
    return d, i


@njit(cache=True)
def _push_max(hd, hi, size, d, i):
    hd[size] = d
    hi[size] = i
    pos = size
    while pos > 0:
        parent = (pos - 1) // 2
        if _lt(hd[parent], hi[parent], hd[pos], hi[pos]):
            hd[pos], hd[parent] = hd[parent], hd[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            pos = parent
        else:
            break


@njit(cache=True)
def _pop_max(hd, hi, size):
    d = hd[0]
    i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and _lt(hd[best], hi[best], hd[left], hi[left]):
            best = left
        if right < size and _lt(hd[best], hi[best], hd[right], hi[right]):
            best = right
        if best == pos:
            break
        hd[pos], hd[best] = hd[best], hd[pos]
        hi[pos], hi[best] = hi[best], hi[pos]
        pos = best
    return d, i


@njit(cache=True)
def search_layer(vectors, adj, deg, entries, q, ef, visited, stamp, cand_d, cand_i):
    """Best-first search on one layer; returns (ids, dists) ascending."""
    best_d = np.empty(ef + 1, np.float64)
    best_i = np.empty(ef + 1, np.int32)
    bn = 0
    cn = 0
    for t in range(entries.shape[0]):
        e = entries[t]
        if visited[e] == stamp:
            continue
        visited[e] = stamp
        d = -_dot(vectors, e, q)
        _push_min(cand_d, cand_i, cn, d, e)
        cn += 1
        _push_max(best_d, best_i, bn, d, e)
        bn += 1
        if bn > ef:
            _pop_max(best_d, best_i, bn)
            bn -= 1
    while cn > 0:
        d, c = _pop_min(cand_d, cand_i, cn)
        cn -= 1
        if bn >= ef and _lt(best_d[0], best_i[0], d, c):
            break
        for s in range(deg[c]):
            nb = adj[c, s]
            if visited[nb] == stamp:
                continue
            visited[nb] = stamp
            dn = -_dot(vectors, nb, q)
            if bn < ef or _lt(dn, nb, best_d[0], best_i[0]):
                _push_min(cand_d, cand_i, cn, dn, nb)
                cn += 1
                _push_max(best_d, best_i, bn, dn, nb)
                bn += 1
                if bn > ef:
                    _pop_max(best_d, best_i, bn)
                    bn -= 1
    out_d = np.empty(bn, np.float64)
    out_i = np.empty(bn, np.int32)
    for t in range(bn - 1, -1, -1):
        d, i = _pop_max(best_d, best_i, bn)
        bn -= 1
        out_d[t] = d
        out_i[t] = i
    return out_i, out_d


@njit(cache=True)
def select_neighbors(vectors, cand_i, cand_d, m):
    """Diversity-aware selection: keep candidates closer to the query than to
    any already-selected neighbor; backfill from pruned ones up to m."""
    count = cand_i.shape[0]
    out = np.empty(m, np.int32)
    pruned = np.empty(count, np.int32)
    sel = 0
    pn = 0
    for t in range(count):
        if sel >= m:
            break
        c = cand_i[t]
        dc = cand_d[t]
        keep = True
        for s in range(sel):
            ds = -_dot(vectors, c, vectors[out[s]])
            if ds < dc:
                keep = False
                break
        if keep:
            out[sel] = c
            sel += 1
        else:
            pruned[pn] = c
            pn += 1
    t = 0
    while sel < m and t < pn:
        out[sel] = pruned[t]
        sel += 1
        t += 1
    return out[:sel].copy()


@njit(cache=True)
def connect_node(vectors, adj, deg, node, sel, maxdeg):
    """Adopt ``sel`` as the node's neighbors and add reverse edges, shrinking
    any over-full neighbor with the same diversity heuristic."""
    for t in range(sel.shape[0]):
        adj[node, t] = sel[t]
    deg[node] = sel.shape[0]
    for t in range(sel.shape[0]):
        nb = sel[t]
        if deg[nb] < maxdeg:
            adj[nb, deg[nb]] = node
            deg[nb] += 1
            continue
        count = deg[nb] + 1
        cd = np.empty(count, np.float64)
        ci = np.empty(count, np.int32)
        for s in range(deg[nb]):
            ci[s] = adj[nb, s]
            cd[s] = -_dot(vectors, adj[nb, s], vectors[nb])
        ci[count - 1] = node
        cd[count - 1] = -_dot(vectors, node, vectors[nb])
        # insertion sort, ascending by (distance, id)
        for a in range(1, count):
            kd = cd[a]
            ki = ci[a]
            b = a - 1
            while b >= 0 and _lt(kd, ki, cd[b], ci[b]):
                cd[b + 1] = cd[b]
                ci[b + 1] = ci[b]
                b -= 1
            cd[b + 1] = kd
            ci[b + 1] = ki
        kept = select_neighbors(vectors, ci, cd, maxdeg)
        for s in range(kept.shape[0]):
            adj[nb, s] = kept[s]
        deg[nb] = kept.shape[0]
