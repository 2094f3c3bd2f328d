"""Pure-numpy fallback for the graph search kernels (MVR_NO_NUMBA=1).

Same (distance, id) lexicographic tie handling as the JIT path; neighbor
distances are batched through numpy instead of an inner compiled loop.
"""

import heapq

import numpy as np


def search_layer(vectors, adj, deg, entries, q, ef, visited, stamp, cand_d=None, cand_i=None):
    best: list[tuple[float, int]] = []  # max-heap via negated keys
    cand: list[tuple[float, int]] = []
    for e in entries:
        e = int(e)
        if visited[e] == stamp:
            continue
        visited[e] = stamp
        d = -float(vectors[e] @ q)
        heapq.heappush(cand, (d, e))
        heapq.heappush(best, (-d, -e))
        if len(best) > ef:
            heapq.heappop(best)
    while cand:
        d, c = heapq.heappop(cand)
        if len(best) >= ef and (d, c) > (-best[0][0], -best[0][1]):
            break
        nbs = adj[c, : deg[c]]
        fresh = nbs[visited[nbs] != stamp]
        if fresh.size == 0:
            continue
        visited[fresh] = stamp
        dists = -(vectors[fresh] @ q)
        for nb, dn in zip(fresh, dists):
            nb = int(nb)
            dn = float(dn)
            if len(best) < ef or (dn, nb) < (-best[0][0], -best[0][1]):
                heapq.heappush(cand, (dn, nb))
                heapq.heappush(best, (-dn, -nb))
                if len(best) > ef:
                    heapq.heappop(best)
    ordered = sorted((-d, -i) for d, i in best)
    out_i = np.array([i for _, i in ordered], dtype=np.int32)
    out_d = np.array([d for d, _ in ordered], dtype=np.float64)
    return out_i, out_d


def select_neighbors(vectors, cand_i, cand_d, m):
    out: list[int] = []
    pruned: list[int] = []
    for c, dc in zip(cand_i, cand_d):
        if len(out) >= m:
            break
        c = int(c)
        if out:
            ds = -(vectors[out] @ vectors[c])
            if float(ds.min()) < dc:
                pruned.append(c)
                continue
        out.append(c)
    for c in pruned:
        if len(out) >= m:
            break
        out.append(c)
    return np.array(out, dtype=np.int32)


def connect_node(vectors, adj, deg, node, sel, maxdeg):
    adj[node, : len(sel)] = sel
    deg[node] = len(sel)
    for nb in sel:
        nb = int(nb)
        if deg[nb] < maxdeg:
            adj[nb, deg[nb]] = node
            deg[nb] += 1
            continue
        ids = np.append(adj[nb, : deg[nb]], node).astype(np.int32)
        dists = -(vectors[ids] @ vectors[nb])
        order = np.lexsort((ids, dists))
        kept = select_neighbors(vectors, ids[order], dists[order], maxdeg)
        adj[nb, : len(kept)] = kept
        deg[nb] = len(kept)
