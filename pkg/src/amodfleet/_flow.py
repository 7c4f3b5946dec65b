"""Numba kernels for min-cost flow on DAGs via successive shortest paths.

Nodes are pre-split (in/out) by the caller. Directed arcs come in forward/
backward pairs at indices 2j / 2j+1. Negative costs are handled by an initial
potential pass in topological order (valid on an acyclic network); every
subsequent Dijkstra then runs on nonnegative reduced costs.
"""
from __future__ import annotations

import numpy as np
from numba import njit

INF = np.inf

STATUS_OK = 0
STATUS_DISCONNECTED = 1


@njit(cache=True)
def _heap_push(hk, hv, n, key, val):
    i = n
    hk[i] = key
    hv[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if hk[p] > hk[i] or (hk[p] == hk[i] and hv[p] > hv[i]):
            hk[p], hk[i] = hk[i], hk[p]
            hv[p], hv[i] = hv[i], hv[p]
            i = p
        else:
            break
    return n + 1


@njit(cache=True)
def _heap_pop(hk, hv, n):
    key = hk[0]
    val = hv[0]
    n -= 1
    hk[0] = hk[n]
    hv[0] = hv[n]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        s = i
        if l < n and (hk[l] < hk[s] or (hk[l] == hk[s] and hv[l] < hv[s])):
            s = l
        if r < n and (hk[r] < hk[s] or (hk[r] == hk[s] and hv[r] < hv[s])):
            s = r
        if s == i:
            break
        hk[s], hk[i] = hk[i], hk[s]
        hv[s], hv[i] = hv[i], hv[s]
        i = s
    return key, val, n


@njit(cache=True)
def dag_potentials(n_nodes, csr_start, csr_arc, arc_head, arc_cost, src):
    """Shortest-path distances from src over forward (even-index) arcs of the
    original DAG; INF where unreachable."""
    indeg = np.zeros(n_nodes, dtype=np.int64)
    for j in range(0, len(arc_head), 2):
        indeg[arc_head[j]] += 1
    stack = np.empty(n_nodes, dtype=np.int64)
    top = 0
    for v in range(n_nodes):
        if indeg[v] == 0:
            stack[top] = v
            top += 1
    topo = np.empty(n_nodes, dtype=np.int64)
    cnt = 0
    while top > 0:
        top -= 1
        u = stack[top]
        topo[cnt] = u
        cnt += 1
        for idx in range(csr_start[u], csr_start[u + 1]):
            j = csr_arc[idx]
            if j % 2 == 0:
                h = arc_head[j]
                indeg[h] -= 1
                if indeg[h] == 0:
                    stack[top] = h
                    top += 1
    dist = np.full(n_nodes, INF)
    dist[src] = 0.0
    for i in range(cnt):
        u = topo[i]
        du = dist[u]
        if du == INF:
            continue
        for idx in range(csr_start[u], csr_start[u + 1]):
            j = csr_arc[idx]
            if j % 2 == 0:
                h = arc_head[j]
                nd = du + arc_cost[j]
                if nd < dist[h]:
                    dist[h] = nd
    return dist


@njit(cache=True)
def solve_ssp(n_nodes, csr_start, csr_arc, arc_head, arc_cost, cap,
              src, dst, k, fill_arc_a, fill_arc_b, fill_arc_c):
    """Send k units src->dst at minimum cost.

    Augments along true shortest paths while they have negative cost; once the
    shortest path cost reaches zero the remaining units are routed over the
    per-vehicle zero-cost direct paths (fill_arc_* are the directed indices of
    source arc, vertex split arc and sink arc per vehicle), which is optimal
    because successive shortest path costs are non-decreasing.

    Returns (total_cost, potentials, n_augmentations, status); cap is modified
    in place and encodes the final flow.
    """
    pi = dag_potentials(n_nodes, csr_start, csr_arc, arc_head, arc_cost, src)
    dist = np.empty(n_nodes)
    pred = np.empty(n_nodes, dtype=np.int64)
    hk = np.empty(len(arc_head) + 4)
    hv = np.empty(len(arc_head) + 4, dtype=np.int64)
    total_cost = 0.0
    flow_val = 0
    n_aug = 0

    while flow_val < k:
        for v in range(n_nodes):
            dist[v] = INF
            pred[v] = -1
        dist[src] = 0.0
        hn = _heap_push(hk, hv, 0, 0.0, src)
        while hn > 0:
            d, u, hn = _heap_pop(hk, hv, hn)
            if d > dist[u]:
                continue
            for idx in range(csr_start[u], csr_start[u + 1]):
                j = csr_arc[idx]
                if cap[j] <= 0:
                    continue
                v = arc_head[j]
                if pi[v] == INF:
                    continue
                rc = arc_cost[j] + pi[u] - pi[v]
                if rc < 0.0:
                    rc = 0.0  # guard against float noise in reduced costs
                nd = d + rc
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = j
                    hn = _heap_push(hk, hv, hn, nd, v)
        if dist[dst] == INF:
            return total_cost, pi, n_aug, STATUS_DISCONNECTED
        true_cost = dist[dst] + pi[dst] - pi[src]
        for v in range(n_nodes):
            if dist[v] < INF and pi[v] < INF:
                pi[v] += dist[v]
        if true_cost >= 0.0:
            break
        v = dst
        while v != src:
            j = pred[v]
            cap[j] -= 1
            cap[j ^ 1] += 1
            v = arc_head[j ^ 1]
        total_cost += true_cost
        flow_val += 1
        n_aug += 1

    # route the remaining units over unused vehicles' zero-cost direct paths
    for i in range(len(fill_arc_a)):
        if flow_val >= k:
            break
        ja = fill_arc_a[i]
        if cap[ja] == 1:  # source arc untouched => vehicle unused
            for j in (ja, fill_arc_b[i], fill_arc_c[i]):
                cap[j] -= 1
                cap[j ^ 1] += 1
            flow_val += 1
    if flow_val != k:
        return total_cost, pi, n_aug, STATUS_DISCONNECTED
    return total_cost, pi, n_aug, STATUS_OK


@njit(cache=True)
def min_reduced_cost(csr_start, csr_arc, arc_head, arc_cost, cap, pi, n_nodes):
    """Minimum reduced cost over residual arcs with finite potentials; the
    optimality certificate requires this to be (numerically) nonnegative."""
    worst = INF
    for u in range(n_nodes):
        if pi[u] == INF:
            continue
        for idx in range(csr_start[u], csr_start[u + 1]):
            j = csr_arc[idx]
            if cap[j] <= 0:
                continue
            v = arc_head[j]
            if pi[v] == INF:
                continue
            rc = arc_cost[j] + pi[u] - pi[v]
            if rc < worst:
                worst = rc
    return worst
