"""Gradients of the attack loss with respect to one adjacency row.

The loss is the classification margin of the attacked node v,

    L = p[y] - max_{c != y} p[c]      (or p[y] - p[c] for a fixed target c)

seen as a function of the relaxed perturbation delta through

    a'_v = a_v + (1 - 2 a_v) * delta,

applied symmetrically to row and column v, with the degree normalization
differentiated as well.  The heavy lifting happens in the kernel backend
(:mod:`mibtack.backend`); this module owns validation, the sign chain
(1 - 2 a_v), and the finite-difference oracle that double-checks the
analytic path through the reference forward pass.
"""

import numpy as np

from . import backend
from . import _kernels_numpy as _knp
from .models import NonFiniteError, forward, _normalize_dense


def _cw_from_probs(p, y):
    masked = np.delete(p, y)
    return float(p[y] - masked.max())


class ModelRuntime:
    """Dense, contiguous views of (model, graph) bound to a kernel backend.

    Construct once per (model, graph) pair and reuse across attack
    iterations; all methods are pure and safe to call concurrently.
    """

    def __init__(self, model, g):
        self.kern = backend.kernels()
        self.model = model
        self.num_nodes = g.num_nodes
        self.adj = np.ascontiguousarray(g.adjacency.toarray(), dtype=np.float64)
        self.base_deg = self.adj.sum(axis=1)
        self.x = np.ascontiguousarray(g.features, dtype=np.float64)
        self.weights = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in model.weights)
        self.labels0 = np.asarray(g.labels, dtype=np.int64) - 1
        self.arch = model.arch
        self.depth = int(model.prop_depth)
        self.tau = float(model.teleport)

    def clean_row(self, v):
        return self.adj[v].copy()

    def perturbed_row(self, v, delta):
        a = self.adj[v]
        return a + (1.0 - 2.0 * a) * delta

    def probs_for_row(self, row, v):
        """Softmax output of node v with row/col v replaced by ``row``."""
        s, _ = self.kern.operator_from_row(self.adj, self.base_deg, row, v)
        w = self.weights
        if self.arch == "gcn":
            if len(w) == 2:
                return self.kern.gcn_probs_row(s, self.x, w[0], w[1], v)
            return _knp.gcn_probs_row_any(s, self.x, w, v)
        if self.arch == "sgc":
            return self.kern.sgc_probs_row(s, self.x, w[0], self.depth, v)
        return self.kern.appnp_probs_row(s, self.x, w[0], w[1], self.depth, self.tau, v)

    def _pair_grad(self, row, v, y, c):
        s, r = self.kern.operator_from_row(self.adj, self.base_deg, row, v)
        w = self.weights
        if self.arch == "gcn":
            if len(w) == 2:
                return self.kern.gcn_pair_grad(s, self.x, r, w[0], w[1], v, y, c)
            return _knp.gcn_pair_grad_any(s, self.x, r, w, v, y, c)
        if self.arch == "sgc":
            return self.kern.sgc_pair_grad(s, self.x, r, w[0], self.depth, v, y, c)
        return self.kern.appnp_pair_grad(s, self.x, r, w[0], w[1], self.depth, self.tau, v, y, c)

    def loss_and_grad(self, v, delta, c=-1):
        """CW loss (targeted when c >= 0) and its gradient w.r.t. delta."""
        y = int(self.labels0[v])
        row = self.perturbed_row(v, delta)
        p, pair = self._pair_grad(row, v, y, c)
        grad = (1.0 - 2.0 * self.adj[v]) * pair
        grad[v] = 0.0
        loss = float(p[y] - p[c]) if c >= 0 else _cw_from_probs(p, y)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteError("non-finite attack loss or gradient")
        return loss, p, grad


def _check_delta(g, v, delta):
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (g.num_nodes,):
        raise ValueError("delta must have one entry per node")
    if not np.all(np.isfinite(delta)):
        raise ValueError("delta must be finite")
    if delta.min() < 0.0 or delta.max() > 1.0:
        raise ValueError("delta entries must lie in [0, 1]")
    if delta[v] != 0.0:
        raise ValueError("delta[v] must be 0")
    return delta


def grad_wrt_row(model, g, v, delta):
    """Exact reverse-mode gradient of the CW loss w.r.t. delta.

    Entry v is always 0 (the self-entry is never a candidate).
    """
    delta = _check_delta(g, v, delta)
    _, _, grad = ModelRuntime(model, g).loss_and_grad(v, delta)
    return grad


def fd_grad_oracle(model, g, v, delta, h=1e-4):
    """Finite-difference gradient through the reference forward pass.

    Central differences in the interior, one-sided at the box boundary.
    Evaluations at delta +/- h bypass box validation deliberately (the
    relaxed loss extends smoothly past [0, 1]).  Entry v stays 0.  Slow,
    only meant as a test oracle.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    delta = np.asarray(delta, dtype=np.float64)
    y = int(g.labels[v]) - 1
    adj = g.adjacency.toarray().astype(np.float64)
    a = adj[v].copy()
    x = g.features

    def loss_at(d):
        row = a + (1.0 - 2.0 * a) * d
        pert = adj.copy()
        pert[v, :] = row
        pert[:, v] = row
        p = forward(model, _normalize_dense(pert, owner=v), x).probs[v]
        return _cw_from_probs(p, y)

    base = loss_at(delta)
    out = np.zeros_like(delta)
    for u in range(delta.size):
        if u == v:
            continue
        d = delta.copy()
        if delta[u] < h:
            d[u] = delta[u] + h
            out[u] = (loss_at(d) - base) / h
        elif delta[u] > 1.0 - h:
            d[u] = delta[u] - h
            out[u] = (base - loss_at(d)) / h
        else:
            d[u] = delta[u] + h
            hi = loss_at(d)
            d[u] = delta[u] - h
            lo = loss_at(d)
            out[u] = (hi - lo) / (2.0 * h)
    return out


def fd_directional(fun, x0, h=1e-4):
    """Generic coordinatewise finite differences of a scalar callable.

    Used by tests for synthetic losses; central differences everywhere.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.zeros_like(x0)
    for i in range(x0.size):
        d = x0.copy()
        d[i] = x0[i] + h
        hi = fun(d)
        d[i] = x0[i] - h
        lo = fun(d)
        out[i] = (hi - lo) / (2.0 * h)
    return out
