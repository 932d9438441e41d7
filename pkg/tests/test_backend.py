"""Backend selection and numba/numpy kernel parity."""

import numpy as np
import pytest

from mibtack import backend
from mibtack import _kernels_numba as knb
from mibtack import _kernels_numpy as knp


@pytest.fixture(autouse=True)
def restore_backend():
    prev = backend.backend_name()
    yield
    backend.set_backend(prev)


def _zero_diag_entry(grad, v):
    # the pair gradient at u == v is meaningless by contract
    out = np.asarray(grad).copy()
    out[v] = 0.0
    return out


def _case(seed, n=10, f=6, classes=3):
    rng = np.random.default_rng(seed)
    adj = np.triu((rng.random((n, n)) < 0.3).astype(np.float64), k=1)
    adj = adj + adj.T
    x = (rng.random((n, f)) < 0.5).astype(np.float64)
    v = int(rng.integers(n))
    row_v = np.where(rng.random(n) < 0.5, rng.random(n), adj[v])
    row_v[v] = 0.0
    w1 = rng.normal(0.0, 0.5, (f, 5))
    w2 = rng.normal(0.0, 0.5, (5, classes))
    w = rng.normal(0.0, 0.5, (f, classes))
    y = int(rng.integers(classes))
    return adj, adj.sum(axis=1), x, row_v, v, w1, w2, w, y


class TestSelection:
    def test_set_backend(self):
        backend.set_backend("numpy")
        assert backend.backend_name() == "numpy"
        assert backend.kernels() is knp
        backend.set_backend("numba")
        assert backend.backend_name() == "numba"
        assert backend.kernels() is knb

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError, match="unknown kernel backend"):
            backend.set_backend("cupy")

    def test_env_var_resolution(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "numpy")
        backend.set_backend(None)
        assert backend.backend_name() == "numpy"

    def test_env_var_normalized(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "  NUMBA ")
        backend.set_backend(None)
        assert backend.backend_name() == "numba"

    def test_env_var_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "tensorflow")
        backend.set_backend(None)
        with pytest.raises(ValueError, match=backend.ENV_VAR):
            backend.backend_name()

    def test_unset_env_prefers_numba(self, monkeypatch):
        monkeypatch.delenv(backend.ENV_VAR, raising=False)
        backend.set_backend(None)
        assert backend.backend_name() == "numba"


class TestKernelParity:
    @pytest.mark.parametrize("seed", range(8))
    def test_operator(self, seed):
        adj, deg, _, row_v, v, *_ = _case(seed)
        s_a, r_a = knb.operator_from_row(adj, deg, row_v, v)
        s_b, r_b = knp.operator_from_row(adj, deg, row_v, v)
        np.testing.assert_allclose(s_a, s_b, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(r_a, r_b, rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("seed", range(8))
    def test_gcn(self, seed):
        adj, deg, x, row_v, v, w1, w2, _, y = _case(seed)
        s, r = knp.operator_from_row(adj, deg, row_v, v)
        np.testing.assert_allclose(knb.gcn_probs_row(s, x, w1, w2, v),
                                   knp.gcn_probs_row(s, x, w1, w2, v),
                                   rtol=1e-10)
        p_a, g_a = knb.gcn_pair_grad(s, x, r, w1, w2, v, y, -1)
        p_b, g_b = knp.gcn_pair_grad(s, x, r, w1, w2, v, y, -1)
        np.testing.assert_allclose(p_a, p_b, rtol=1e-10)
        np.testing.assert_allclose(_zero_diag_entry(g_a, v),
                                   _zero_diag_entry(g_b, v), rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_sgc(self, seed):
        adj, deg, x, row_v, v, _, _, w, y = _case(seed)
        s, r = knp.operator_from_row(adj, deg, row_v, v)
        np.testing.assert_allclose(knb.sgc_probs_row(s, x, w, 2, v),
                                   knp.sgc_probs_row(s, x, w, 2, v),
                                   rtol=1e-10)
        p_a, g_a = knb.sgc_pair_grad(s, x, r, w, 2, v, y, -1)
        p_b, g_b = knp.sgc_pair_grad(s, x, r, w, 2, v, y, -1)
        np.testing.assert_allclose(p_a, p_b, rtol=1e-10)
        np.testing.assert_allclose(_zero_diag_entry(g_a, v),
                                   _zero_diag_entry(g_b, v), rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_appnp(self, seed):
        adj, deg, x, row_v, v, w1, w2, _, y = _case(seed)
        s, r = knp.operator_from_row(adj, deg, row_v, v)
        np.testing.assert_allclose(knb.appnp_probs_row(s, x, w1, w2, 10, 0.1, v),
                                   knp.appnp_probs_row(s, x, w1, w2, 10, 0.1, v),
                                   rtol=1e-10)
        p_a, g_a = knb.appnp_pair_grad(s, x, r, w1, w2, 10, 0.1, v, y, -1)
        p_b, g_b = knp.appnp_pair_grad(s, x, r, w1, w2, 10, 0.1, v, y, -1)
        np.testing.assert_allclose(p_a, p_b, rtol=1e-10)
        np.testing.assert_allclose(_zero_diag_entry(g_a, v),
                                   _zero_diag_entry(g_b, v), rtol=1e-9, atol=1e-12)

    def test_kernels_deterministic(self):
        adj, deg, x, row_v, v, w1, w2, _, y = _case(0)
        for mod in (knb, knp):
            s, r = mod.operator_from_row(adj, deg, row_v, v)
            a = mod.gcn_pair_grad(s, x, r, w1, w2, v, y, -1)
            b = mod.gcn_pair_grad(s, x, r, w1, w2, v, y, -1)
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
