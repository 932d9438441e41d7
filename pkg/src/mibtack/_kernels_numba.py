"""Numba kernels for row-perturbed forward passes and their gradients.

Same interface and same math as :mod:`mibtack._kernels_numpy`, different
implementation strategy: the numpy module materialises the dense dL/dS
matrix, while these kernels exploit that dL/dS is a short sum of rank-1
terms (plus one dense term for GCN) and never build it.  The two routes
cross-check each other in the test suite; both are validated against
finite differences.

All arrays must be C-contiguous float64 (ModelRuntime guarantees this).
First call per signature pays JIT compilation; cache=True persists the
compiled code next to the package.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def operator_from_row(adj, base_deg, row_v, v):
    n = adj.shape[0]
    rowsum = 0.0
    for u in range(n):
        rowsum += row_v[u]
    dt = np.empty(n)
    for u in range(n):
        dt[u] = 1.0 + base_deg[u] - adj[v, u] + row_v[u]
    dt[v] = 1.0 + rowsum
    r = np.empty(n)
    for u in range(n):
        r[u] = 1.0 / np.sqrt(dt[u])
    s = np.empty((n, n))
    rv = r[v]
    for u in range(n):
        ru = r[u]
        if u == v:
            for w in range(n):
                s[u, w] = row_v[w] * ru * r[w]
        else:
            for w in range(n):
                s[u, w] = adj[u, w] * ru * r[w]
            s[u, v] = row_v[u] * ru * rv
        s[u, u] += ru * ru
    return s, r


@njit(cache=True)
def _softmax1d(z):
    m = z[0]
    for j in range(1, z.shape[0]):
        if z[j] > m:
            m = z[j]
    e = np.empty_like(z)
    tot = 0.0
    for j in range(z.shape[0]):
        e[j] = np.exp(z[j] - m)
        tot += e[j]
    for j in range(z.shape[0]):
        e[j] /= tot
    return e


@njit(cache=True)
def _cw_seed(p, y, c):
    # strict > keeps the lowest index on ties
    if c < 0:
        best = -1.0
        for j in range(p.shape[0]):
            if j != y and p[j] > best:
                best = p[j]
                c = j
    diff = p[y] - p[c]
    g = np.empty_like(p)
    for j in range(p.shape[0]):
        g[j] = -p[j] * diff
    g[y] += p[y]
    g[c] -= p[c]
    return g, c


@njit(cache=True)
def _finish_pair(mv, q, r, v):
    # pair[u] = M[v,u] r_v r_u + Dhat[v] + Dhat[u],  Dhat = -0.5 r^2 q
    n = mv.shape[0]
    pair = np.empty(n)
    rv = r[v]
    dhat_v = -0.5 * rv * rv * q[v]
    for u in range(n):
        pair[u] = mv[u] * rv * r[u] + dhat_v - 0.5 * r[u] * r[u] * q[u]
    return pair


# ---------------------------------------------------------------------------
# GCN (two layers; deeper stacks route to the numpy backend upstream)

@njit(cache=True)
def gcn_probs_row(s, x, w1, w2, v):
    h1 = np.maximum(np.dot(s, np.dot(x, w1)), 0.0)
    z = np.dot(np.dot(s[v], h1), w2)
    return _softmax1d(z)


@njit(cache=True)
def gcn_pair_grad(s, x, r, w1, w2, v, y, c):
    n = s.shape[0]
    nh = w1.shape[1]
    b1 = np.dot(x, w1)
    z1 = np.dot(s, b1)
    h1 = np.maximum(z1, 0.0)
    b2 = np.dot(h1, w2)
    sv = s[v]
    p = _softmax1d(np.dot(sv, b2))
    g2, c = _cw_seed(p, y, c)

    # dL/dS = e_v (B2 g2)^T + G1 B1^T with G1 = outer(S[v], W2 g2) masked by relu'
    a1 = np.dot(b2, g2)
    w2g = np.dot(w2, g2)
    g1 = np.empty((n, nh))
    for u in range(n):
        svu = sv[u]
        for j in range(nh):
            g1[u, j] = svu * w2g[j] if z1[u, j] > 0.0 else 0.0

    mv = a1 + np.dot(b1, g1[v]) + np.dot(g1, b1[v])
    sg1 = np.dot(s, g1)
    q = np.empty(n)
    for u in range(n):
        acc = a1[u] * sv[u]
        for j in range(nh):
            acc += g1[u, j] * z1[u, j] + b1[u, j] * sg1[u, j]
        q[u] = acc
    q[v] += np.dot(sv, a1)
    return p, _finish_pair(mv, q, r, v)


# ---------------------------------------------------------------------------
# SGC

@njit(cache=True)
def sgc_probs_row(s, x, w, k, v):
    n = s.shape[0]
    e = np.zeros(n)
    e[v] = 1.0
    for _ in range(k):
        e = np.dot(s, e)
    return _softmax1d(np.dot(np.dot(e, x), w))


@njit(cache=True)
def sgc_pair_grad(s, x, r, w, k, v, y, c):
    n = s.shape[0]
    d = x.shape[1]
    tall = np.empty((k + 1, n, d))
    tall[0] = x
    for i in range(1, k + 1):
        tall[i] = np.dot(s, tall[i - 1])
    p = _softmax1d(np.dot(tall[k][v], w))
    g, c = _cw_seed(p, y, c)
    if k == 0:
        return p, np.zeros(n)

    # dL/dS = sum_i outer(s_i, T_{i-1} @ (W g)),  s_k = e_v, s_{i-1} = S s_i
    gt = np.dot(w, g)
    mv = np.zeros(n)
    q = np.zeros(n)
    uvec = np.zeros(n)
    uvec[v] = 1.0
    for i in range(k, 0, -1):
        t = np.dot(tall[i - 1], gt)
        st = np.dot(s, t)
        su = np.dot(s, uvec)
        mv += uvec[v] * t + t[v] * uvec
        q += uvec * st + t * su
        uvec = su
    return p, _finish_pair(mv, q, r, v)


# ---------------------------------------------------------------------------
# APPNP

@njit(cache=True)
def appnp_probs_row(s, x, w1, w2, k, tau, v):
    hout = np.dot(np.maximum(np.dot(x, w1), 0.0), w2)
    n = s.shape[0]
    e = np.zeros(n)
    e[v] = 1.0
    z = np.zeros(w2.shape[1])
    coef = 1.0
    for _ in range(k):
        z += tau * coef * np.dot(e, hout)
        e = np.dot(s, e)
        coef *= 1.0 - tau
    z += coef * np.dot(e, hout)
    return _softmax1d(z)


@njit(cache=True)
def appnp_pair_grad(s, x, r, w1, w2, k, tau, v, y, c):
    n = s.shape[0]
    nc = w2.shape[1]
    h1 = np.maximum(np.dot(x, w1), 0.0)
    hout = np.dot(h1, w2)
    zall = np.empty((k + 1, n, nc))
    zall[0] = hout
    for i in range(1, k + 1):
        zall[i] = (1.0 - tau) * np.dot(s, zall[i - 1]) + tau * hout
    p = _softmax1d(zall[k][v])
    g, c = _cw_seed(p, y, c)
    if k == 0:
        return p, np.zeros(n)

    # dL/dS = sum_i outer(u_i, (1-tau) Z_{i-1} @ g),  u_k = e_v, u_{i-1} = (1-tau) S u_i
    mv = np.zeros(n)
    q = np.zeros(n)
    uvec = np.zeros(n)
    uvec[v] = 1.0
    for i in range(k, 0, -1):
        t = (1.0 - tau) * np.dot(zall[i - 1], g)
        st = np.dot(s, t)
        su = np.dot(s, uvec)
        mv += uvec[v] * t + t[v] * uvec
        q += uvec * st + t * su
        uvec = (1.0 - tau) * su
    return p, _finish_pair(mv, q, r, v)
