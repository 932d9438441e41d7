"""Comparison attacks adapted to the minimum-budget setting.

All baselines emit the same AttackOutcome records as the main attack,
with ``method`` set to the baseline kind, and every outcome goes through
the same independent re-verification (success is decided by a fresh
reference forward pass on the final flips, never by loop-internal state).

Greedy kinds (rand, dice, dice-t, fga) flip one edge at a time until the
target is misclassified or the flip cap is hit; on failure the flips
tried so far stay in the record.  pgd-fixed runs projected gradient
descent at the fixed budget Delta = degree(v) and keeps whatever the
final discretization yields.
"""

from dataclasses import dataclass

import numpy as np

from .attack import (
    AttackOutcome,
    _project_l0_box,
    cosine_anneal,
    cw_loss,
    discretize,
    flips_from_delta,
    margin,
    pgd_step,
)
from .gradients import ModelRuntime
from .graph import degree
from .models import predict_probs

KINDS = ("rand", "dice", "dice-t", "fga", "pgd-fixed")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    flip_cap: int = 1000
    pgd_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.flip_cap < 1:
            raise ValueError("flip_cap must be >= 1")
        if self.pgd_iters < 1:
            raise ValueError("pgd_iters must be >= 1")


def run_baseline(model, g, v, cfg):
    """Dispatch a baseline attack on one target node."""
    if cfg.kind == "rand":
        return attack_rand(model, g, v, cfg)
    if cfg.kind == "dice":
        return attack_dice(model, g, v, cfg, targeted=False)
    if cfg.kind == "dice-t":
        return attack_dice(model, g, v, cfg, targeted=True)
    if cfg.kind == "fga":
        return attack_fga(model, g, v, cfg)
    return attack_pgd_fixed(model, g, v, cfg)


def _clean_outcome(v, margin_before, method):
    return AttackOutcome(
        node=v, success=True, min_budget=0, flips=(),
        margin_before=margin_before, margin_after=margin_before,
        iterations=0, init_class=None, method=method,
    )


def _finalize(model, g, v, rt, delta_bin, iterations, margin_before, method):
    """Build the outcome; success comes from re-verifying the final flips."""
    if delta_bin is not None and delta_bin.any():
        flips = flips_from_delta(rt.clean_row(v), delta_bin)
        margin_after = margin(model, g, v, delta_bin)
    else:
        flips = ()
        margin_after = margin_before
    return AttackOutcome(
        node=v, success=bool(margin_after < 0.0), min_budget=len(flips), flips=flips,
        margin_before=margin_before, margin_after=margin_after,
        iterations=iterations, init_class=None, method=method,
    )


def _loop_hit(rt, v, delta_bin):
    p = rt.probs_for_row(rt.perturbed_row(v, delta_bin), v)
    return cw_loss(p, int(rt.labels0[v])) < 0.0


def attack_rand(model, g, v, cfg):
    """Flip uniformly random coordinates, no repeats, until misclassified."""
    rt = ModelRuntime(model, g)
    margin_before = margin(model, g, v)
    if margin_before < 0.0:
        return _clean_outcome(v, margin_before, "rand")
    rng = np.random.default_rng([cfg.seed, v])
    order = rng.permutation(rt.num_nodes)
    delta = np.zeros(rt.num_nodes)
    steps = 0
    for u in order:
        if u == v:
            continue
        if steps >= cfg.flip_cap:
            break
        delta[u] = 1.0
        steps += 1
        if _loop_hit(rt, v, delta):
            break
    return _finalize(model, g, v, rt, delta, steps, margin_before, "rand")


def attack_dice(model, g, v, cfg, targeted=False):
    """Label-rule random attack: delete same-label edges, add cross-label ones.

    Candidate labels are ground truth where the split makes them knowable
    (train and validation) and model predictions elsewhere.  The targeted
    variant restricts additions to the strongest wrong class of v.
    """
    method = "dice-t" if targeted else "dice"
    rt = ModelRuntime(model, g)
    margin_before = margin(model, g, v)
    if margin_before < 0.0:
        return _clean_outcome(v, margin_before, method)

    probs = predict_probs(model, g)
    labels_eff = probs.argmax(axis=1) + 1
    known = np.concatenate([g.splits.train, g.splits.validation])
    labels_eff[known] = g.labels[known]
    y_label = int(g.labels[v])
    if targeted:
        pv = probs[v].copy()
        pv[y_label - 1] = -np.inf
        add_label = int(np.argmax(pv)) + 1
    else:
        add_label = None

    rng = np.random.default_rng([cfg.seed, v])
    row = rt.clean_row(v)
    delta = np.zeros(rt.num_nodes)
    flipped = np.zeros(rt.num_nodes, dtype=bool)
    flipped[v] = True
    steps = 0
    while steps < cfg.flip_cap:
        dele = np.flatnonzero((row > 0.0) & ~flipped & (labels_eff == y_label))
        if targeted:
            add = np.flatnonzero((row == 0.0) & ~flipped & (labels_eff == add_label))
        else:
            add = np.flatnonzero((row == 0.0) & ~flipped & (labels_eff != y_label))
        pool = dele if rng.integers(2) == 0 else add
        if pool.size == 0:
            pool = add if pool is dele else dele
        if pool.size == 0:
            break
        u = int(rng.choice(pool))
        delta[u] = 1.0
        flipped[u] = True
        row[u] = 1.0 - row[u]
        steps += 1
        if _loop_hit(rt, v, delta):
            break
    return _finalize(model, g, v, rt, delta, steps, margin_before, method)


def attack_fga(model, g, v, cfg):
    """Gradient greedy: flip the steepest loss-decreasing coordinate each step."""
    rt = ModelRuntime(model, g)
    margin_before = margin(model, g, v)
    if margin_before < 0.0:
        return _clean_outcome(v, margin_before, "fga")
    delta = np.zeros(rt.num_nodes)
    blocked = np.zeros(rt.num_nodes, dtype=bool)
    blocked[v] = True
    steps = 0
    while steps < cfg.flip_cap:
        _, _, grad = rt.loss_and_grad(v, delta)
        scores = np.where(blocked, np.inf, grad)
        u = int(np.argmin(scores))
        if not scores[u] < 0.0:
            break  # no loss-decreasing flip left
        delta[u] = 1.0
        blocked[u] = True
        steps += 1
        if _loop_hit(rt, v, delta):
            break
    return _finalize(model, g, v, rt, delta, steps, margin_before, "fga")


def attack_pgd_fixed(model, g, v, cfg):
    """Fixed-budget PGD with Delta = degree(v), deterministic final top-Delta.

    The step size follows the same cosine schedule as the main attack,
    annealed over pgd_iters.  Isolated targets are skipped (no budget to
    spend), reported as failures.
    """
    rt = ModelRuntime(model, g)
    margin_before = margin(model, g, v)
    if margin_before < 0.0:
        return _clean_outcome(v, margin_before, "pgd-fixed")
    budget = degree(g, v)
    if budget == 0:
        return AttackOutcome(
            node=v, success=False, min_budget=0, flips=(),
            margin_before=margin_before, margin_after=margin_before,
            iterations=0, init_class=None, method="pgd-fixed",
        )
    delta = np.zeros(rt.num_nodes)
    for t in range(cfg.pgd_iters):
        alpha = cosine_anneal(1.0, t, cfg.pgd_iters)
        _, _, grad = rt.loss_and_grad(v, delta)
        tilde = pgd_step(delta, -grad, alpha)
        delta, _ = _project_l0_box(tilde, budget, owner=v)
    dbin = discretize(delta)
    return _finalize(model, g, v, rt, dbin, cfg.pgd_iters, margin_before, "pgd-fixed")
