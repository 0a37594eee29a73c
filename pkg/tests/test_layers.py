import numpy as np
import pytest

from gradcheck import numeric_grad, relative_error
from ximp.autograd import ParameterStore, Tensor, constant, mean_rows, parameter, sum_all
from ximp.chem import parse_smiles
from ximp.errors import MissingEdgeFeature, ShapeMismatch
from ximp.layers import (
    ATOM_FEATURE_DIM,
    GinLayerParams,
    atom_features,
    directed_edges,
    gin_forward,
    gin_layer,
    gine_forward,
    gine_layer,
    init_mlp,
    mlp_head,
)
from ximp.rng import Rng

relu = lambda z: np.maximum(z, 0.0)  # noqa: E731


def identity(t):
    return t


def gin_loop(x, edges, eps, fn):
    """Per-node loop reference for GIN."""
    out = (1.0 + eps) * x.copy()
    for u, v in edges:
        out[v] += x[u]
        out[u] += x[v]
    return fn(out)


def random_graph(rng, n, p=0.5):
    return [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]


def as_index(edges):
    src = [u for u, v in edges] + [v for u, v in edges]
    dst = [v for u, v in edges] + [u for u, v in edges]
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


class TestFeatures:
    def test_rows_are_one_hot_blocks(self):
        g = parse_smiles("CC(=O)[O-]")
        x = atom_features(g)
        assert x.shape == (4, ATOM_FEATURE_DIM)
        assert np.all(x.sum(axis=1) == 4 + np.array([a.aromatic for a in g.atoms]))

    def test_directed_edges_both_directions(self):
        src, dst, attr = directed_edges(parse_smiles("C=CC"))
        assert sorted(zip(src, dst)) == [(0, 1), (1, 0), (1, 2), (2, 1)]
        assert attr[list(src).index(0)].tolist() == [0.0, 1.0, 0.0, 0.0]


class TestGin:
    def test_edgeless_graph_is_scaled_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
        out = gin_forward(constant(x), empty, 0.5, identity)
        assert np.array_equal(out.value, 1.5 * x)

    def test_two_nodes(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = gin_forward(constant(x), np.array([[0, 1], [1, 0]]), 0.0, identity)
        assert np.array_equal(out.value, [[4.0, 6.0], [4.0, 6.0]])

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        edges = random_graph(rng, 5)
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(3, 3))
        fn = lambda t: constant(relu(t.value @ w))  # noqa: E731
        out = gin_forward(constant(x), as_index(edges), 0.25, fn)
        assert np.allclose(out.value, gin_loop(x, edges, 0.25, lambda z: relu(z @ w)), atol=1e-12)

    def test_dense_and_index_adjacency_agree(self):
        rng = np.random.default_rng(4)
        edges = random_graph(rng, 6)
        a = np.zeros((6, 6))
        for u, v in edges:
            a[u, v] = a[v, u] = 1.0
        x = constant(rng.normal(size=(6, 2)))
        assert np.allclose(gin_forward(x, a, 0.1, identity).value, gin_forward(x, as_index(edges), 0.1, identity).value)

    def test_out_of_range_edge(self):
        with pytest.raises(ShapeMismatch):
            gin_forward(constant(np.ones((2, 1))), (np.array([0]), np.array([5])), 0.0, identity)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        store = ParameterStore()
        params = GinLayerParams.create(store, Rng(1), "g", 4)
        edges = random_graph(rng, 7)
        x = rng.normal(size=(7, 4))
        perm = rng.permutation(7)
        inv = np.argsort(perm)
        out = gin_layer(constant(x), as_index(edges), params).value
        edges_p = [(inv[u], inv[v]) for u, v in edges]
        out_p = gin_layer(constant(x[perm]), as_index(edges_p), params).value
        assert np.allclose(out_p, out[perm], atol=1e-12)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_decalin_and_bicyclopentyl_indistinguishable(self, depth):
        store = ParameterStore()
        layers = [GinLayerParams.create(store, Rng(9), f"g{i}", 8) for i in range(depth)]
        embeddings = []
        for smiles in ("C1CCC2CCCCC2C1", "C1CCC(C1)C1CCCC1"):
            g = parse_smiles(smiles)
            src, dst, _ = directed_edges(g)
            h = constant(np.ones((g.n_atoms, 8)))
            for p in layers:
                h = gin_layer(h, (src, dst), p)
            embeddings.append(mean_rows(h).value)
        assert np.abs(embeddings[0] - embeddings[1]).max() <= 1e-12


class TestGine:
    def test_reduces_to_gin_for_nonnegative_inputs_and_zero_edges(self):
        rng = np.random.default_rng(6)
        edges = random_graph(rng, 5)
        idx = as_index(edges)
        x = constant(rng.random((5, 3)))
        zero_e = np.zeros((len(idx[0]), 3))
        a = gine_forward(x, idx, zero_e, 0.2, identity).value
        b = gin_forward(x, idx, 0.2, identity).value
        assert np.allclose(a, b, atol=1e-14)

    def test_negative_messages_clamped(self):
        x = constant(np.array([[1.0], [2.0]]))
        idx = (np.array([0, 1]), np.array([1, 0]))
        e = np.array([[-5.0], [-5.0]])
        out = gine_forward(x, idx, e, 0.0, identity).value
        assert np.array_equal(out, x.value)

    def test_matches_loop_reference_on_molecule(self):
        g = parse_smiles("CC(=O)NC=C")
        src, dst, attr = directed_edges(g)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(g.n_atoms, 4))
        w_e = rng.normal(size=(4, 4))
        out = gine_forward(constant(x), (src, dst), attr, 0.3, identity, lambda t: constant(t.value @ w_e)).value
        ref = 1.3 * x
        for k, (u, v) in enumerate(zip(src, dst)):
            ref[v] += relu(x[u] + attr[k] @ w_e)
        assert g.n_atoms == 6
        assert np.allclose(out, ref, atol=1e-12)

    def test_missing_edge_features(self):
        x = constant(np.ones((2, 1)))
        idx = (np.array([0, 1]), np.array([1, 0]))
        with pytest.raises(MissingEdgeFeature):
            gine_forward(x, idx, None, 0.0, identity)
        with pytest.raises(MissingEdgeFeature):
            gine_forward(x, idx, np.ones((1, 1)), 0.0, identity)

    def test_layer_gradcheck(self):
        g = parse_smiles("OCC=N")
        src, dst, attr = directed_edges(g)
        store = ParameterStore()
        params = GinLayerParams.create(store, Rng(2), "g", 4, edge_dim=4)
        x = parameter(np.random.default_rng(8).normal(size=(g.n_atoms, 4)))
        def loss():
            return sum_all(gine_layer(x, (src, dst), attr, params))

        store.zero_grad()
        x.zero_grad()
        loss().backward()
        for t in [x] + [store[n] for n in store.names()]:
            numeric = numeric_grad(lambda: float(loss().value[0, 0]), t.value, 1e-6)
            assert relative_error(t.grad, numeric) < 1e-5


class TestHead:
    def test_zero_weights_give_zero(self):
        store = ParameterStore()
        init_mlp(store, Rng(0), "head", (3, 5, 1))
        for name in store.names():
            store[name].value[...] = 0.0
        assert np.array_equal(mlp_head(constant(np.ones((4, 3))), store).value, np.zeros((4, 1)))

    def test_single_layer_is_affine(self):
        store = ParameterStore()
        init_mlp(store, Rng(0), "head", (3, 1))
        h = np.random.default_rng(1).normal(size=(4, 3))
        expected = h @ store["head.0.weight"].value + store["head.0.bias"].value
        assert np.allclose(mlp_head(constant(h), store, n_layers=1).value, expected)

    def test_wide_output_rejected(self):
        store = ParameterStore()
        init_mlp(store, Rng(0), "head", (3, 2))
        with pytest.raises(ShapeMismatch):
            mlp_head(constant(np.ones((1, 3))), store, n_layers=1)

    def test_gradcheck(self):
        store = ParameterStore()
        init_mlp(store, Rng(4), "head", (3, 6, 1))
        h = Tensor(np.random.default_rng(2).normal(size=(5, 3)))

        def loss():
            return sum_all(mlp_head(h, store))

        loss().backward()
        for name in store.names():
            numeric = numeric_grad(lambda: float(loss().value[0, 0]), store[name].value, 1e-6)
            assert relative_error(store[name].grad, numeric) < 1e-5
