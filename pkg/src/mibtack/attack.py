"""Minimum-budget topology attack via dynamic projected gradient descent.

The attack perturbs only the adjacency row of the target node v.  A
relaxed perturbation delta in [0,1]^N encodes flips through

    a'_v = a_v + (1 - 2 a_v) * delta,

applied symmetrically.  Each iteration takes one normalized gradient step
on the classification margin, projects onto {at most Delta nonzeros, box
[0,1]}, discretizes, and tests for misclassification.  The budget Delta
itself is adapted: shrink multiplicatively on success, grow on failure,
so the search homes in on the decision boundary with the smallest edge
budget.  After the first discrete success both step sizes are cosine
annealed over a fixed patience window.

Successes are never trusted from loop state: every reported outcome is
re-verified with a fresh reference forward pass.
"""

import math
from dataclasses import dataclass

import numpy as np

from .models import AdjacencyRow, forward, normalize_adjacency
from .gradients import ModelRuntime


@dataclass(frozen=True)
class AttackConfig:
    alpha0: float = 1.0
    beta0: float = 0.1
    patience: int = 800
    gamma: float = 0.0
    max_total_iters: int = None  # None -> 4 * patience
    seed: int = 0
    candidate_mask: object = None  # callable(g, v) -> length-N bool vector, True = allowed
    init_mode: str = "one-step"

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be > 0")
        if self.beta0 < 0:
            raise ValueError("beta0 must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.max_total_iters is not None and self.max_total_iters < 1:
            raise ValueError("max_total_iters must be >= 1")
        if self.init_mode not in ("one-step", "none"):
            raise ValueError("init_mode must be 'one-step' or 'none'")

    @property
    def iter_cap(self):
        return self.max_total_iters if self.max_total_iters is not None else 4 * self.patience


@dataclass
class PerturbationState:
    """Mutable state of one attack run (one target node)."""

    delta: np.ndarray
    budget: float
    mu: float
    best_delta: np.ndarray
    best_budget: float
    crossed: bool
    remaining_patience: int
    iteration: int


@dataclass(frozen=True)
class AttackOutcome:
    node: int
    success: bool
    min_budget: int
    flips: tuple  # ((u, "add" | "delete"), ...), 0-based u
    margin_before: float
    margin_after: float
    iterations: int
    init_class: int = None  # 0-based, None when init was skipped
    method: str = "mibtack"


# ---------------------------------------------------------------------------
# primitives

def apply_perturbation(a, delta):
    """a + (1 - 2a) * delta, entrywise; binary delta flips edge membership."""
    vals = np.asarray(a.values, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != vals.shape:
        raise ValueError("delta length does not match the row")
    if delta[a.owner] != 0.0:
        raise ValueError("delta must be 0 at the owner index")
    if delta.min() < 0.0 or delta.max() > 1.0:
        raise ValueError("delta entries must lie in [0, 1]")
    out = vals + (1.0 - 2.0 * vals) * delta
    assert out.min() >= 0.0 and out.max() <= 1.0
    return AdjacencyRow(owner=a.owner, values=out)


def cw_loss(probs, y):
    """probs[y] minus the best wrong-class probability; negative = misclassified."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size < 2:
        raise ValueError("need at least two classes")
    if not 0 <= y < p.size:
        raise IndexError(f"class {y} out of range")
    return float(p[y] - np.delete(p, y).max())


def pgd_step(delta, grad, alpha):
    """One step of length alpha along the normalized gradient; g=0 is a no-op."""
    nrm = float(np.linalg.norm(grad))
    if nrm == 0.0:
        return np.array(delta, dtype=np.float64, copy=True)
    return delta + (alpha / nrm) * grad


def _project_l0_box(delta_tilde, budget, owner=None, mask=None):
    dt = np.asarray(delta_tilde, dtype=np.float64)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    allowed = np.ones(dt.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if owner is not None:
        allowed[owner] = False
    cand = dt[allowed]
    if cand.size > budget:
        # (budget+1)-th largest candidate; entries <= mu die after the shift
        mu = float(np.partition(cand, cand.size - budget - 1)[cand.size - budget - 1])
    else:
        mu = 0.0
    out = np.clip(dt - mu, 0.0, 1.0)
    out[~allowed] = 0.0
    return out, mu


def project_l0_box(delta_tilde, budget, owner=None, mask=None):
    """Shift by the (budget+1)-th largest entry and clip to [0, 1].

    Keeps at most ``budget`` nonzero entries, all from the top of
    delta_tilde; the owner index and mask-excluded indices are forced to 0.
    """
    out, _ = _project_l0_box(delta_tilde, budget, owner=owner, mask=mask)
    return out


def discretize(delta):
    """Strictly positive entries become 1, the rest 0."""
    return (np.asarray(delta, dtype=np.float64) > 0.0).astype(np.float64)


def is_success(model, g, v, delta_binary, gamma, _runtime=None):
    """True iff the discretely perturbed graph misclassifies v with margin < -gamma."""
    rt = _runtime if _runtime is not None else ModelRuntime(model, g)
    row = rt.perturbed_row(v, np.asarray(delta_binary, dtype=np.float64))
    p = rt.probs_for_row(row, v)
    return cw_loss(p, int(rt.labels0[v])) < -gamma


def update_budget(budget, success, beta):
    """Shrink to min(D-1, D(1-beta)) on success, grow to max(D+1, D(1+beta)) on failure."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if success:
        nb = min(budget - 1.0, budget * (1.0 - beta))
    else:
        nb = max(budget + 1.0, budget * (1.0 + beta))
    return max(1.0, nb)


def cosine_anneal(step0, t, patience):
    if not 0 <= t <= patience:
        raise ValueError("t must lie in [0, patience]")
    return step0 * 0.5 * (1.0 + math.cos(math.pi * t / patience))


def jaccard_mask(threshold=0.03):
    """Candidate mask modeling a similarity-filtering defense.

    Additions (a_vu = 0) are allowed only when the binary-feature Jaccard
    similarity of u and v reaches the threshold; deletions of existing
    edges stay unrestricted.
    """

    def mask(g, v):
        x = g.features
        if not np.all((x == 0.0) | (x == 1.0)):
            raise ValueError("jaccard mask requires binary features")
        xv = x[v]
        inter = x @ xv
        union = x.sum(axis=1) + xv.sum() - inter
        jac = np.ones(g.num_nodes)
        nz = union > 0
        jac[nz] = inter[nz] / union[nz]
        row = g.adjacency[[v]].toarray().ravel()
        allowed = (row > 0.0) | (jac >= threshold)
        allowed[v] = False
        return allowed

    mask.mask_label = f"jaccard>={threshold}"
    return mask


def _allowed_vector(g, v, candidate_mask):
    if candidate_mask is None:
        allowed = np.ones(g.num_nodes, dtype=bool)
    else:
        allowed = np.asarray(candidate_mask(g, v), dtype=bool).copy()
        if allowed.shape != (g.num_nodes,):
            raise ValueError("candidate mask must return one flag per node")
    allowed[v] = False
    return allowed


def margin(model, g, v, overlay=None):
    """CW loss of node v via the reference forward pass.

    ``overlay`` is an optional binary perturbation vector; positive margin
    means v is still classified correctly.
    """
    if overlay is None:
        na = normalize_adjacency(g)
    else:
        overlay = np.asarray(overlay, dtype=np.float64)
        if not np.all((overlay == 0.0) | (overlay == 1.0)):
            raise ValueError("overlay must be binary")
        a = g.adjacency[[v]].toarray().ravel()
        row = apply_perturbation(AdjacencyRow(owner=v, values=a), overlay)
        na = normalize_adjacency(g, row)
    probs = forward(model, na, g.features).probs
    return cw_loss(probs[v], int(g.labels[v]) - 1)


def flips_from_delta(clean_row, delta_binary):
    """Edge flips encoded by a binary perturbation against the clean row."""
    idx = np.flatnonzero(np.asarray(delta_binary) > 0.0)
    return tuple((int(u), "delete" if clean_row[u] > 0.0 else "add") for u in idx)


# ---------------------------------------------------------------------------
# one-step initialization

def init_perturbation(model, g, v, candidate_mask=None, _runtime=None):
    """Choose a starting class and single-flip perturbation.

    For every wrong class c, the most loss-decreasing single flip under
    the targeted margin p[y] - p[c] is found from the gradient at delta=0;
    the class whose flip achieves the largest discrete loss decrease wins
    (ties toward the lowest class index).  Returns (c_star, delta0).
    """
    rt = _runtime if _runtime is not None else ModelRuntime(model, g)
    n = rt.num_nodes
    y = int(rt.labels0[v])
    allowed = _allowed_vector(g, v, candidate_mask)
    if not allowed.any():
        raise ValueError("empty candidate set")
    zeros = np.zeros(n)
    p0 = rt.probs_for_row(rt.clean_row(v), v)
    num_classes = p0.shape[0]
    best = None  # (descent, c, delta)
    for c in range(num_classes):
        if c == y:
            continue
        _, _, grad = rt.loss_and_grad(v, zeros, c=c)
        scores = np.where(allowed, grad, np.inf)
        u = int(np.argmin(scores))
        dbin = zeros.copy()
        dbin[u] = 1.0
        p1 = rt.probs_for_row(rt.perturbed_row(v, dbin), v)
        descent = float((p0[y] - p0[c]) - (p1[y] - p1[c]))
        if best is None or descent > best[0]:
            best = (descent, c, dbin)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# the attack

def mibtack(model, g, v, cfg):
    """Find a minimum-budget set of edge flips misclassifying node v.

    Success means the returned flips, applied discretely and re-verified
    by an independent forward pass, push the margin below -gamma.  A node
    already past that threshold returns success with zero flips.
    """
    rt = ModelRuntime(model, g)
    y = int(rt.labels0[v])
    margin_before = margin(model, g, v)
    if margin_before < -cfg.gamma:
        return AttackOutcome(
            node=v, success=True, min_budget=0, flips=(),
            margin_before=margin_before, margin_after=margin_before,
            iterations=0, init_class=None,
        )

    allowed = _allowed_vector(g, v, cfg.candidate_mask)
    init_class = None
    if cfg.init_mode == "one-step":
        init_class, delta0 = init_perturbation(model, g, v, cfg.candidate_mask, _runtime=rt)
    else:
        delta0 = np.zeros(rt.num_nodes)

    state = PerturbationState(
        delta=delta0, budget=1.0, mu=0.0, best_delta=None, best_budget=math.inf,
        crossed=False, remaining_patience=cfg.patience, iteration=0,
    )
    clean_row = rt.clean_row(v)
    crossed_at = 0

    while state.iteration < cfg.iter_cap:
        if state.crossed:
            t = min(state.iteration - crossed_at, cfg.patience)
            alpha = cosine_anneal(cfg.alpha0, t, cfg.patience)
            beta = cosine_anneal(cfg.beta0, t, cfg.patience)
        else:
            alpha, beta = cfg.alpha0, cfg.beta0
        _, _, grad = rt.loss_and_grad(v, state.delta)
        tilde = pgd_step(state.delta, -grad, alpha)
        int_budget = max(1, int(round(state.budget)))
        state.delta, state.mu = _project_l0_box(tilde, int_budget, owner=v, mask=allowed)
        dbin = discretize(state.delta)
        hit = is_success(model, g, v, dbin, cfg.gamma, _runtime=rt)
        state.iteration += 1
        if hit:
            nnz = int(dbin.sum())
            if nnz < state.best_budget:
                state.best_delta = dbin.copy()
                state.best_budget = nnz
            if not state.crossed:
                state.crossed = True
                crossed_at = state.iteration
            state.budget = update_budget(state.budget, True, beta)
            if state.best_budget <= 1:
                break
        else:
            state.budget = update_budget(state.budget, False, beta)
        if state.crossed:
            state.remaining_patience = cfg.patience - (state.iteration - crossed_at)
            if state.remaining_patience <= 0:
                break

    success = state.best_delta is not None
    if success:
        margin_after = margin(model, g, v, state.best_delta)
        if not margin_after < -cfg.gamma:
            raise RuntimeError(
                f"re-verification failed for node {v}: loop success "
                f"not reproduced by the reference forward pass"
            )
        flips = flips_from_delta(clean_row, state.best_delta)
    else:
        margin_after = margin_before
        flips = ()
    return AttackOutcome(
        node=v, success=success, min_budget=len(flips), flips=flips,
        margin_before=margin_before, margin_after=margin_after,
        iterations=state.iteration, init_class=init_class,
    )
