"""Numba kernels for the navigable small-world graph index.

All kernels work on flat preallocated arrays: per-level neighbor id and
neighbor distance matrices plus fill counts. Distances are squared L2 over
augmented vectors. The visited set is an int stamp array reused across
searches.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _l2sq(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        s += d * d
    return s


@njit(cache=True)
def _heap_push(hd, hi, size, d, idx):
    pos = size
    hd[pos] = d
    hi[pos] = idx
    while pos > 0:
        parent = (pos - 1) >> 1
        if hd[parent] <= hd[pos]:
            break
        hd[parent], hd[pos] = hd[pos], hd[parent]
        hi[parent], hi[pos] = hi[pos], hi[parent]
        pos = parent
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hi, size):
    top_d = hd[0]
    top_i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        smallest = pos
        if left < size and hd[left] < hd[smallest]:
            smallest = left
        if right < size and hd[right] < hd[smallest]:
            smallest = right
        if smallest == pos:
            break
        hd[smallest], hd[pos] = hd[pos], hd[smallest]
        hi[smallest], hi[pos] = hi[pos], hi[smallest]
        pos = smallest
    return top_d, top_i, size


@njit(cache=True)
def greedy_descent(data, neighbors, counts, entry, query):
    """Move to the closest neighbor until no neighbor improves; ef=1 search."""
    cur = entry
    cur_d = _l2sq(query, data[entry])
    improved = True
    while improved:
        improved = False
        for t in range(counts[cur]):
            e = neighbors[cur, t]
            d = _l2sq(query, data[e])
            if d < cur_d:
                cur_d = d
                cur = e
                improved = True
    return cur, cur_d


@njit(cache=True)
def search_layer(data, neighbors, counts, entry, query, ef, visited, stamp):
    """Best-first beam search at one layer; returns (dists, ids) ascending."""
    n = data.shape[0]
    cd = np.empty(n + 1)
    ci = np.empty(n + 1, np.int64)
    rd = np.empty(ef + 1)
    ri = np.empty(ef + 1, np.int64)
    csize = 0
    rsize = 0
    visited[entry] = stamp
    d0 = _l2sq(query, data[entry])
    csize = _heap_push(cd, ci, csize, d0, entry)
    rsize = _heap_push(rd, ri, rsize, -d0, entry)
    while csize > 0:
        d, c, csize = _heap_pop(cd, ci, csize)
        if rsize >= ef and d > -rd[0]:
            break
        for t in range(counts[c]):
            e = neighbors[c, t]
            if visited[e] == stamp:
                continue
            visited[e] = stamp
            de = _l2sq(query, data[e])
            if rsize < ef or de < -rd[0]:
                csize = _heap_push(cd, ci, csize, de, e)
                rsize = _heap_push(rd, ri, rsize, -de, e)
                if rsize > ef:
                    _, _, rsize = _heap_pop(rd, ri, rsize)
    out_d = np.empty(rsize)
    out_i = np.empty(rsize, np.int64)
    while rsize > 0:
        nd, ni, rsize = _heap_pop(rd, ri, rsize)
        out_d[rsize] = -nd
        out_i[rsize] = ni
    return out_d, out_i


@njit(cache=True)
def add_edge(neighbors, nbr_dist, counts, node, new_id, d, max_degree):
    """Append an edge, or replace the farthest existing one when full."""
    c = counts[node]
    if c < max_degree:
        neighbors[node, c] = new_id
        nbr_dist[node, c] = d
        counts[node] = c + 1
        return
    worst_j = 0
    worst_d = nbr_dist[node, 0]
    for t in range(1, c):
        if nbr_dist[node, t] > worst_d:
            worst_d = nbr_dist[node, t]
            worst_j = t
    if d < worst_d:
        neighbors[node, worst_j] = new_id
        nbr_dist[node, worst_j] = d
