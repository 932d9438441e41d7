"""Normalization, forward passes, training, and checkpoint round-trips."""

import numpy as np
import pytest

from mibtack.models import (
    ARCHS,
    AdjacencyRow,
    GnnModel,
    NonFiniteError,
    TrainConfig,
    default_train_config,
    forward,
    load_model,
    normalize_adjacency,
    predict_probs,
    save_model,
    train,
    train_with_history,
)

from conftest import make_graph, make_toy_graph


class TestNormalizeAdjacency:
    def test_two_node_single_edge(self):
        g = make_graph([1, 2], edges=[(0, 1)])
        na = normalize_adjacency(g)
        assert np.allclose(na.degree_vector, [2.0, 2.0])
        assert np.allclose(na.operator, [[0.5, 0.5], [0.5, 0.5]])

    def test_isolated_node_self_loop_only(self):
        g = make_graph([1, 2], edges=[])
        na = normalize_adjacency(g)
        assert np.allclose(na.operator, np.eye(2))

    def test_half_weight_overlay(self):
        g = make_graph([1, 2], edges=[(0, 1)])
        na = normalize_adjacency(g, AdjacencyRow(owner=0, values=np.array([0.0, 0.5])))
        assert np.allclose(na.degree_vector, [1.5, 1.5])
        assert np.allclose(na.operator, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])

    def test_binary_overlay_equal_to_base_row_is_identity(self):
        g = make_toy_graph()
        base = normalize_adjacency(g)
        row = g.adjacency[[3]].toarray().ravel()
        with_overlay = normalize_adjacency(g, AdjacencyRow(owner=3, values=row))
        assert np.allclose(base.operator, with_overlay.operator)

    def test_symmetric_operator(self):
        g = make_toy_graph()
        na = normalize_adjacency(g)
        assert np.allclose(na.operator, na.operator.T)

    def test_rejects_overlay_self_loop(self):
        g = make_graph([1, 2], edges=[(0, 1)])
        with pytest.raises(ValueError):
            normalize_adjacency(g, AdjacencyRow(owner=0, values=np.array([1.0, 0.5])))


class TestForward:
    def test_zero_weights_give_uniform(self):
        g = make_toy_graph()
        d, c = g.num_features, g.num_classes
        for arch, weights in (
            ("gcn", (np.zeros((d, 8)), np.zeros((8, c)))),
            ("sgc", (np.zeros((d, c)),)),
            ("appnp", (np.zeros((d, 8)), np.zeros((8, c)))),
        ):
            m = GnnModel(arch=arch, weights=weights, prop_depth=2, teleport=0.1)
            tr = forward(m, normalize_adjacency(g), g.features)
            assert np.allclose(tr.probs, 1.0 / c)

    def test_sgc_k0_ignores_adjacency(self):
        g1 = make_graph([1, 2, 1, 2], edges=[(0, 1), (2, 3)])
        g2 = make_graph([1, 2, 1, 2], edges=[(0, 2), (1, 3), (0, 3)])
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 2))
        m = GnnModel(arch="sgc", weights=(w,), prop_depth=0)
        p1 = forward(m, normalize_adjacency(g1), g1.features).probs
        p2 = forward(m, normalize_adjacency(g2), g2.features).probs
        assert np.allclose(p1, p2)

    def test_single_node_gcn_uses_own_features(self):
        g = make_graph([1], edges=[], features=np.array([[1.0, 2.0]]), num_classes=2)
        rng = np.random.default_rng(1)
        w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
        m = GnnModel(arch="gcn", weights=(w1, w2))
        tr = forward(m, normalize_adjacency(g), g.features)
        h = np.maximum(g.features @ w1, 0.0)
        logits = h @ w2
        e = np.exp(logits - logits.max())
        assert np.allclose(tr.probs, e / e.sum())

    def test_rows_sum_to_one(self, toy_graph, toy_gcn):
        tr = forward(toy_gcn, normalize_adjacency(toy_graph), toy_graph.features)
        assert np.allclose(tr.probs.sum(axis=1), 1.0, atol=1e-9)
        assert tr.probs.min() >= 0.0

    def test_purity(self, toy_graph, toy_gcn):
        na = normalize_adjacency(toy_graph)
        p1 = forward(toy_gcn, na, toy_graph.features).probs
        p2 = forward(toy_gcn, na, toy_graph.features).probs
        assert np.array_equal(p1, p2)

    def test_non_finite_raises_with_layer(self):
        g = make_graph([1, 2], edges=[(0, 1)])
        w = (np.full((2, 2), 1e308),)
        m = GnnModel(arch="sgc", weights=w, prop_depth=1)
        bad = g.features * 1e308
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            forward(m, normalize_adjacency(g), bad)


class TestTraining:
    def test_deterministic_weights(self):
        g = make_toy_graph(num_nodes=30, num_classes=3, seed=2)
        tc = default_train_config("gcn", seed=5)
        m1, m2 = train("gcn", g, tc), train("gcn", g, tc)
        for w1, w2 in zip(m1.weights, m2.weights):
            assert np.array_equal(w1, w2)

    def test_loss_decreases_by_epoch_10(self):
        g = make_toy_graph(num_nodes=40, num_classes=2, seed=4)
        for arch in ARCHS:
            _, history = train_with_history(arch, g, default_train_config(arch, seed=0))
            assert history["train_loss"][10] < history["train_loss"][0]

    def test_arch_defaults(self):
        assert default_train_config("gcn").weight_decay == pytest.approx(5e-4)
        assert default_train_config("sgc").weight_decay == pytest.approx(5e-6)
        assert default_train_config("appnp").weight_decay == pytest.approx(5e-6)
        with pytest.raises(ValueError):
            default_train_config("mlp")

    def test_benchmark_accuracy_floor(self, bench_graph, bench_models):
        from mibtack.attack import margin
        for arch in ARCHS:
            model = bench_models[arch]
            test = bench_graph.splits.test
            correct = sum(margin(model, bench_graph, int(v)) >= 0.0 for v in test)
            assert correct / test.size >= 0.7, arch

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(dropout=1.0)


class TestCheckpointRoundTrip:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_bit_exact(self, tmp_path, arch):
        g = make_toy_graph(num_nodes=30, num_classes=3, seed=2)
        m = train(arch, g, default_train_config(arch, seed=1))
        path = tmp_path / f"{arch}.ckpt"
        save_model(m, path)
        m2 = load_model(path)
        assert m2.arch == m.arch
        assert m2.prop_depth == m.prop_depth
        assert m2.teleport == m.teleport
        assert len(m2.weights) == len(m.weights)
        for w1, w2 in zip(m.weights, m2.weights):
            assert np.array_equal(w1, w2)
        p1, p2 = predict_probs(m, g), predict_probs(m2, g)
        assert np.array_equal(p1, p2)


class TestPredictProbs:
    def test_matches_forward(self, toy_graph, toy_gcn):
        probs = predict_probs(toy_gcn, toy_graph)
        tr = forward(toy_gcn, normalize_adjacency(toy_graph), toy_graph.features)
        assert np.array_equal(probs, tr.probs)
