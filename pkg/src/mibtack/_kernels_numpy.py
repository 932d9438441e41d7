"""Plain-numpy kernels for row-perturbed forward passes and their gradients.

Every kernel works on a dense copy of the graph: ``adj`` is the clean
symmetric adjacency (float64, zero diagonal), ``base_deg`` its row sums,
and ``row_v`` the perturbed row of the attacked node ``v``.  The
normalized operator is

    S[u, w] = (A'[u, w] + I[u, w]) / sqrt(dt[u] * dt[w]),  dt[u] = 1 + sum_w A'[u, w]

where A' equals ``adj`` with row and column ``v`` replaced by ``row_v``.

Gradient kernels return, alongside the softmax row of the attacked node,
the derivative of ``p[y] - p[c]`` with respect to the symmetric entry
pair (A'[v,u], A'[u,v]) for every u.  The entry at u == v is meaningless
(the diagonal is never perturbed); callers zero it.  Pass ``c = -1`` to
differentiate against the strongest wrong class at the evaluation point.

This module is the fallback backend: same interface as
``_kernels_numba``, vectorised instead of loop-fused, and it additionally
carries the *_any variants that accept an arbitrary number of layers.
"""

import numpy as np


def operator_from_row(adj, base_deg, row_v, v):
    """Normalized operator (with self-loops) after replacing row/col v.

    Returns (S, r) with r[u] = dt[u] ** -0.5.
    """
    n = adj.shape[0]
    dt = 1.0 + base_deg - adj[v, :] + row_v
    dt[v] = 1.0 + row_v.sum()
    r = 1.0 / np.sqrt(dt)
    ap = adj.copy()
    ap[v, :] = row_v
    ap[:, v] = row_v
    ap.flat[:: n + 1] += 1.0
    s = ap * r[:, None]
    s *= r[None, :]
    return s, r


def _softmax1d(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _cw_seed(p, y, c):
    """Gradient of p[y] - p[c] w.r.t. the logits; c = -1 picks the best wrong class."""
    if c < 0:
        masked = p.copy()
        masked[y] = -np.inf
        c = int(np.argmax(masked))
    g = -p * (p[y] - p[c])
    g[y] += p[y]
    g[c] -= p[c]
    return g, c


def _pair_from_shat(s, r, shat, v):
    """Fold dL/dS into the symmetric-pair gradient for row v.

    Chain rule has two parts: the direct S[v,u] / S[u,v] entries, and the
    degree terms (dt[v] and dt[u] both grow with the pair), which touch
    every operator entry in row/col u and v through r.
    """
    m_v = shat[v, :] + shat[:, v]
    q = ((shat + shat.T) * s).sum(axis=1)
    dhat = -0.5 * r * r * q
    return m_v * (r[v] * r) + dhat[v] + dhat


# ---------------------------------------------------------------------------
# GCN: L-1 ReLU graph-conv layers, one linear graph-conv layer, softmax.

def gcn_probs_row_any(s, x, weights, v):
    nlayers = len(weights)
    h = x
    for l in range(nlayers - 1):
        h = np.maximum(s @ (h @ weights[l]), 0.0)
    z = s[v] @ (h @ weights[-1])
    return _softmax1d(z)


def gcn_pair_grad_any(s, x, r, weights, v, y, c):
    nlayers = len(weights)
    bs = []
    zs = []
    h = x
    for l in range(nlayers):
        b = h @ weights[l]
        z = s @ b
        bs.append(b)
        zs.append(z)
        h = np.maximum(z, 0.0) if l < nlayers - 1 else z
    p = _softmax1d(zs[-1][v])
    g, c = _cw_seed(p, y, c)
    grad = np.zeros((s.shape[0], g.shape[0]))
    grad[v] = g
    shat = np.zeros_like(s)
    for l in range(nlayers - 1, -1, -1):
        shat += grad @ bs[l].T
        if l > 0:
            grad = ((s @ grad) @ weights[l].T) * (zs[l - 1] > 0.0)
    return p, _pair_from_shat(s, r, shat, v)


def gcn_probs_row(s, x, w1, w2, v):
    return gcn_probs_row_any(s, x, (w1, w2), v)


def gcn_pair_grad(s, x, r, w1, w2, v, y, c):
    return gcn_pair_grad_any(s, x, r, (w1, w2), v, y, c)


# ---------------------------------------------------------------------------
# SGC: k propagation steps, one linear layer, softmax.

def sgc_probs_row(s, x, w, k, v):
    # (S^k)[v, :] == (S^k e_v)^T because S is symmetric, so propagate a
    # single indicator vector instead of the full feature matrix.
    e = np.zeros(s.shape[0])
    e[v] = 1.0
    for _ in range(k):
        e = s @ e
    return _softmax1d((e @ x) @ w)


def sgc_pair_grad(s, x, r, w, k, v, y, c):
    ts = [x]
    t = x
    for _ in range(k):
        t = s @ t
        ts.append(t)
    p = _softmax1d(ts[-1][v] @ w)
    g, c = _cw_seed(p, y, c)
    shat = np.zeros_like(s)
    grad = np.zeros((s.shape[0], x.shape[1]))
    grad[v] = w @ g
    for i in range(k, 0, -1):
        shat += grad @ ts[i - 1].T
        if i > 1:
            grad = s @ grad
    return p, _pair_from_shat(s, r, shat, v)


# ---------------------------------------------------------------------------
# APPNP: two-layer MLP, then k personalised-pagerank propagation steps.

def appnp_probs_row(s, x, w1, w2, k, tau, v):
    hout = np.maximum(x @ w1, 0.0) @ w2
    # Z_k[v] unrolls to a (1-tau)-weighted sum of (S^j)[v] @ Hout terms;
    # propagate the indicator row like in sgc_probs_row.
    e = np.zeros(s.shape[0])
    e[v] = 1.0
    z = np.zeros(w2.shape[1])
    coef = 1.0
    for _ in range(k):
        z += tau * coef * (e @ hout)
        e = s @ e
        coef *= 1.0 - tau
    z += coef * (e @ hout)
    return _softmax1d(z)


def appnp_pair_grad(s, x, r, w1, w2, k, tau, v, y, c):
    hout = np.maximum(x @ w1, 0.0) @ w2
    zs = [hout]
    z = hout
    for _ in range(k):
        z = (1.0 - tau) * (s @ z) + tau * hout
        zs.append(z)
    p = _softmax1d(zs[-1][v])
    g, c = _cw_seed(p, y, c)
    shat = np.zeros_like(s)
    grad = np.zeros((s.shape[0], g.shape[0]))
    grad[v] = g
    for i in range(k, 0, -1):
        shat += (1.0 - tau) * (grad @ zs[i - 1].T)
        if i > 1:
            grad = (1.0 - tau) * (s @ grad)
    return p, _pair_from_shat(s, r, shat, v)
