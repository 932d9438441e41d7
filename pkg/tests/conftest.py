"""Shared fixtures: pinned benchmark graph, trained models, attack runs.

The benchmark is an SBM (200 nodes, 4 blocks, p_in 0.15, p_out 0.01,
16 binary features, graph seed 7) with 50 correctly-classified targets
per arch.  Everything expensive is session-scoped and computed lazily,
so unit-test files never pay for the acceptance runs.
"""

import time
from itertools import combinations

import numpy as np
import pytest

from mibtack.attack import AttackConfig, margin, mibtack
from mibtack.baselines import BaselineConfig, run_baseline
from mibtack.graph import SbmParams, _build_graph, generate_sbm
from mibtack.models import ARCHS, default_train_config, train

BENCH_SBM = SbmParams(num_nodes=200, num_blocks=4, p_in=0.15, p_out=0.01,
                      num_features=16, feature_signal=0.5, seed=7)
TRAIN_SEED = 4
SAMPLE_SEED = 252
NUM_TARGETS = 50


def make_toy_graph(num_nodes=12, num_classes=2, seed=3, p_in=0.6, p_out=0.15):
    """Small dense SBM for unit tests and exhaustive-search oracles.

    The default 20%-labeled split leaves tiny graphs with a single train
    node, so half the nodes are re-split deterministically for training.
    """
    params = SbmParams(num_nodes=num_nodes, num_blocks=num_classes,
                       p_in=p_in, p_out=p_out, num_features=8,
                       feature_signal=0.9, seed=seed)
    g = generate_sbm(params)
    idx = np.arange(num_nodes)
    splits = (idx[idx % 4 <= 1], idx[idx % 4 == 2], idx[idx % 4 == 3])
    from mibtack.graph import _build_graph, edge_pairs
    return _build_graph(g.num_nodes, g.num_classes, edge_pairs(g),
                        g.features, g.labels, splits, g.meta)


def exhaustive_min_budget(model, g, v, max_size=3):
    """Smallest flip-set size misclassifying v, or None if none of size <= max_size."""
    candidates = [u for u in range(g.num_nodes) if u != v]
    for size in range(1, max_size + 1):
        for combo in combinations(candidates, size):
            overlay = np.zeros(g.num_nodes)
            overlay[list(combo)] = 1.0
            if margin(model, g, v, overlay) < 0.0:
                return size
    return None


def make_graph(labels, edges, features=None, num_classes=None):
    """Hand-built graph for exact-value tests; labels are 1-based."""
    n = len(labels)
    if features is None:
        features = np.eye(n, dtype=np.float64)
    idx = np.arange(n)
    splits = (idx[: max(1, n // 3)],
              idx[max(1, n // 3): max(2, 2 * n // 3)],
              idx[max(2, 2 * n // 3):])
    return _build_graph(num_nodes=n,
                        num_classes=num_classes or int(max(labels)),
                        edges=[(min(u, w), max(u, w)) for u, w in edges],
                        features=np.asarray(features, dtype=np.float64),
                        labels=np.asarray(labels, dtype=np.int64),
                        splits=splits, meta={})


@pytest.fixture(scope="session")
def bench_graph():
    return generate_sbm(BENCH_SBM)


@pytest.fixture(scope="session")
def bench_models(bench_graph):
    return {arch: train(arch, bench_graph, default_train_config(arch, seed=TRAIN_SEED))
            for arch in ARCHS}


@pytest.fixture(scope="session")
def bench_targets(bench_graph, bench_models):
    from mibtack.harness import sample_targets
    return {arch: sample_targets(bench_graph, NUM_TARGETS, SAMPLE_SEED,
                                 model=bench_models[arch], only_correct=True)
            for arch in ARCHS}


def _run_attack(model, g, targets, cfg):
    start = time.perf_counter()
    if isinstance(cfg, BaselineConfig):
        outs = [run_baseline(model, g, int(v), cfg) for v in targets]
    else:
        outs = [mibtack(model, g, int(v), cfg) for v in targets]
    return outs, time.perf_counter() - start


@pytest.fixture(scope="session")
def mib_runs(bench_graph, bench_models, bench_targets):
    """arch -> (outcomes, wall_seconds) for default-config runs."""
    cfg = AttackConfig()
    return {arch: _run_attack(bench_models[arch], bench_graph, bench_targets[arch], cfg)
            for arch in ARCHS}


@pytest.fixture(scope="session")
def fga_runs(bench_graph, bench_models, bench_targets):
    cfg = BaselineConfig(kind="fga")
    return {arch: _run_attack(bench_models[arch], bench_graph, bench_targets[arch], cfg)
            for arch in ARCHS}


@pytest.fixture(scope="session")
def noinit_runs(bench_graph, bench_models, bench_targets):
    cfg = AttackConfig(init_mode="none")
    return {arch: _run_attack(bench_models[arch], bench_graph, bench_targets[arch], cfg)
            for arch in ARCHS}


@pytest.fixture(scope="session")
def toy_graph():
    # seed 5 trains a non-degenerate model with attackable targets
    return make_toy_graph(seed=5)


@pytest.fixture(scope="session")
def toy_gcn(toy_graph):
    return train("gcn", toy_graph, default_train_config("gcn", seed=1))
