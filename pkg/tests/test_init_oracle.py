"""One-step initialization against exhaustive (class, flip) enumeration."""

import numpy as np
import pytest

from mibtack.attack import init_perturbation, margin
from mibtack.gradients import ModelRuntime
from mibtack.graph import SbmParams, generate_sbm
from mibtack.models import GnnModel

GRAPH_SEED = 4
WEIGHT_SEED = 6
DIFFER_NODE = 5  # argmax-confidence wrong class differs from c* here


@pytest.fixture(scope="module")
def six_node_case():
    params = SbmParams(num_nodes=6, num_blocks=3, p_in=0.9, p_out=0.15,
                       num_features=6, feature_signal=0.9, seed=GRAPH_SEED)
    g = generate_sbm(params)
    rng = np.random.default_rng(WEIGHT_SEED)
    w1 = rng.normal(0.0, 0.8, size=(g.num_features, 5))
    w2 = rng.normal(0.0, 0.8, size=(5, g.num_classes))
    return g, GnnModel(arch="gcn", weights=(w1, w2))


def test_pinned_instance_has_enough_correct_nodes(six_node_case):
    g, model = six_node_case
    assert sum(margin(model, g, v) >= 0 for v in range(g.num_nodes)) >= 3


def exhaustive_pair(model, g, v):
    """Best (wrong class, single flip) by discrete targeted-loss descent."""
    rt = ModelRuntime(model, g)
    y = int(rt.labels0[v])
    p0 = rt.probs_for_row(rt.clean_row(v), v)
    best = None
    for c in range(p0.size):
        if c == y:
            continue
        for u in range(g.num_nodes):
            if u == v:
                continue
            dbin = np.zeros(g.num_nodes)
            dbin[u] = 1.0
            p1 = rt.probs_for_row(rt.perturbed_row(v, dbin), v)
            descent = float((p0[y] - p0[c]) - (p1[y] - p1[c]))
            if best is None or descent > best[0] + 1e-12:
                best = (descent, c, u)
    return best[1], best[2]


class TestInitOracle:
    def test_matches_exhaustive_enumeration(self, six_node_case):
        g, model = six_node_case
        checked = 0
        for v in range(g.num_nodes):
            if margin(model, g, v) < 0:
                continue
            c_star, delta0 = init_perturbation(model, g, v)
            assert np.count_nonzero(delta0) == 1
            assert delta0[v] == 0.0
            u_star = int(np.flatnonzero(delta0)[0])
            assert (c_star, u_star) == exhaustive_pair(model, g, v)
            checked += 1
        assert checked >= 3

    def test_confidence_argmax_can_differ_from_c_star(self, six_node_case):
        g, model = six_node_case
        v = DIFFER_NODE
        assert margin(model, g, v) >= 0
        rt = ModelRuntime(model, g)
        p0 = rt.probs_for_row(rt.clean_row(v), v)
        conf = np.array(p0)
        conf[int(rt.labels0[v])] = -np.inf
        c_star, _ = init_perturbation(model, g, v)
        assert int(np.argmax(conf)) != c_star

    def test_binary_classification_forces_wrong_class(self):
        params = SbmParams(num_nodes=8, num_blocks=2, p_in=0.8, p_out=0.1,
                           num_features=6, feature_signal=0.9, seed=5)
        g = generate_sbm(params)
        rng = np.random.default_rng(2)
        w1 = rng.normal(size=(g.num_features, 4))
        w2 = rng.normal(size=(4, 2))
        model = GnnModel(arch="gcn", weights=(w1, w2))
        for v in range(g.num_nodes):
            c_star, _ = init_perturbation(model, g, v)
            assert c_star == 1 - (int(g.labels[v]) - 1)

    def test_fully_masked_candidates_raise(self, six_node_case):
        g, model = six_node_case
        block_all = lambda g_, v_: np.zeros(g_.num_nodes, dtype=bool)
        with pytest.raises(ValueError, match="empty candidate set"):
            init_perturbation(model, g, 0, block_all)
