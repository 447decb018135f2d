"""Primal network simplex for the balanced transportation problem.

Sources ``0..n-1`` and sinks ``n..n+m-1`` are joined to an artificial
root through big-M arcs, giving a strongly feasible starting tree.  The
leaving arc follows Cunningham's rule (last blocking arc met when the
pivot cycle is traversed from its apex), which rules out cycling on the
highly degenerate problems produced by uniform weights.  The tree is
small (``n + m`` arcs) so it is simply rebuilt by breadth-first search
after every pivot instead of maintaining thread indices.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _rebuild(nnodes, root, tail, head, cost, parent, parent_arc, up, depth, pi, order,
             deg, start, adj_node, adj_arc):
    narcs = tail.shape[0]
    deg[:] = 0
    for e in range(narcs):
        deg[tail[e]] += 1
        deg[head[e]] += 1
    start[0] = 0
    for u in range(nnodes):
        start[u + 1] = start[u] + deg[u]
    fill = start[:-1].copy()
    for e in range(narcs):
        u = tail[e]
        v = head[e]
        adj_node[fill[u]] = v
        adj_arc[fill[u]] = e
        fill[u] += 1
        adj_node[fill[v]] = u
        adj_arc[fill[v]] = e
        fill[v] += 1
    parent[root] = -1
    parent_arc[root] = -1
    depth[root] = 0
    pi[root] = 0.0
    order[0] = root
    qh = 0
    qt = 1
    while qh < qt:
        u = order[qh]
        qh += 1
        for s in range(start[u], start[u + 1]):
            v = adj_node[s]
            e = adj_arc[s]
            if e == parent_arc[u]:
                continue
            parent[v] = u
            parent_arc[v] = e
            depth[v] = depth[u] + 1
            if tail[e] == u:
                up[v] = False
                pi[v] = pi[u] + cost[e]
            else:
                up[v] = True
                pi[v] = pi[u] - cost[e]
            order[qt] = v
            qt += 1
    return qt


@njit(cache=True)
def network_simplex(a, b, C, rel_tol, max_iter):
    """Solve ``min <C, G>`` over couplings of ``a`` and ``b``.

    Returns
    -------
    rows, cols, mass : arrays
        Basic arcs carrying mass.
    status : int
        0 optimal, 1 iteration limit reached.
    iters : int
    """
    n, m = C.shape
    nnodes = n + m + 1
    root = n + m
    narcs = n + m
    cmax = 0.0
    for k in range(n):
        for l in range(m):
            if C[k, l] > cmax:
                cmax = C[k, l]
    big = (cmax + 1.0) * nnodes
    eps = rel_tol * max(cmax, 1e-300)

    tail = np.empty(narcs, np.int64)
    head = np.empty(narcs, np.int64)
    flow = np.empty(narcs)
    cost = np.empty(narcs)
    for k in range(n):
        tail[k] = k
        head[k] = root
        flow[k] = a[k]
        cost[k] = 0.0
    for l in range(m):
        tail[n + l] = root
        head[n + l] = n + l
        flow[n + l] = b[l]
        cost[n + l] = big

    parent = np.empty(nnodes, np.int64)
    parent_arc = np.empty(nnodes, np.int64)
    up = np.zeros(nnodes, np.bool_)
    depth = np.empty(nnodes, np.int64)
    pi = np.empty(nnodes)
    order = np.empty(nnodes, np.int64)
    deg = np.empty(nnodes, np.int64)
    start = np.empty(nnodes + 1, np.int64)
    adj_node = np.empty(2 * narcs, np.int64)
    adj_arc = np.empty(2 * narcs, np.int64)
    _rebuild(nnodes, root, tail, head, cost, parent, parent_arc, up, depth, pi, order,
             deg, start, adj_node, adj_arc)

    total = n * m
    block = max(int(np.sqrt(total)), 16)
    pos = 0
    status = 1
    it = 0
    while it < max_iter:
        # block search pricing
        best = -eps
        bk = -1
        bl = -1
        scanned = 0
        cnt = 0
        while scanned < total:
            k = pos // m
            l = pos - k * m
            rc = C[k, l] + pi[k] - pi[n + l]
            if rc < best:
                best = rc
                bk = k
                bl = l
            pos += 1
            if pos == total:
                pos = 0
            scanned += 1
            cnt += 1
            if cnt == block:
                if bk >= 0:
                    break
                cnt = 0
        if bk < 0:
            status = 0
            break
        it += 1
        kk = bk
        ll = n + bl
        # apex of the cycle
        u = kk
        v = ll
        while depth[u] > depth[v]:
            u = parent[u]
        while depth[v] > depth[u]:
            v = parent[v]
        while u != v:
            u = parent[u]
            v = parent[v]
        apex = u
        # delta: blocking arcs are those traversed against their direction
        delta = np.inf
        v = ll
        while v != apex:
            if not up[v]:
                f = flow[parent_arc[v]]
                if f < delta:
                    delta = f
            v = parent[v]
        u = kk
        while u != apex:
            if up[u]:
                f = flow[parent_arc[u]]
                if f < delta:
                    delta = f
            u = parent[u]
        tie = 1e-14 + 1e-12 * delta
        # Cunningham: last blocking arc from the apex, sink side nearest the apex first
        leave = -1
        v = ll
        while v != apex:
            if (not up[v]) and flow[parent_arc[v]] <= delta + tie:
                leave = parent_arc[v]
            v = parent[v]
        if leave < 0:
            u = kk
            while u != apex:
                if up[u] and flow[parent_arc[u]] <= delta + tie:
                    leave = parent_arc[u]
                    break
                u = parent[u]
        # push delta around the cycle
        v = ll
        while v != apex:
            e = parent_arc[v]
            if up[v]:
                flow[e] += delta
            else:
                flow[e] = max(flow[e] - delta, 0.0)
            v = parent[v]
        u = kk
        while u != apex:
            e = parent_arc[u]
            if up[u]:
                flow[e] = max(flow[e] - delta, 0.0)
            else:
                flow[e] += delta
            u = parent[u]
        tail[leave] = kk
        head[leave] = ll
        flow[leave] = delta
        cost[leave] = C[bk, bl]
        _rebuild(nnodes, root, tail, head, cost, parent, parent_arc, up, depth, pi, order,
                 deg, start, adj_node, adj_arc)

    # recompute flows from the final basis by peeling leaves
    excess = np.empty(nnodes)
    for k in range(n):
        excess[k] = a[k]
    for l in range(m):
        excess[n + l] = -b[l]
    excess[root] = 0.0
    for s in range(nnodes - 1, 0, -1):
        u = order[s]
        e = parent_arc[u]
        if up[u]:
            flow[e] = excess[u]
        else:
            flow[e] = -excess[u]
        excess[parent[u]] += excess[u]
    cntp = 0
    for e in range(narcs):
        if tail[e] != root and head[e] != root and flow[e] > 0.0:
            cntp += 1
    rows = np.empty(cntp, np.int64)
    cols = np.empty(cntp, np.int64)
    mass = np.empty(cntp)
    j = 0
    for e in range(narcs):
        if tail[e] != root and head[e] != root and flow[e] > 0.0:
            rows[j] = tail[e]
            cols[j] = head[e] - n
            mass[j] = flow[e]
            j += 1
    return rows, cols, mass, status, it
