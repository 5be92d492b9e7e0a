"""Backbone semantics: aggregation arithmetic, permutation behavior, scores."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invgraph import autodiff as ad
from invgraph import gin
from invgraph.errors import ContractError
from invgraph.graphs import Graph, _frozen, collate
from invgraph.synth import SynthSpec, generate


def _identity_gin(num_types: int, embeddings: np.ndarray) -> gin.GinParams:
    d = embeddings.shape[1]
    layer = gin.GinLayer(
        w1=ad.Tensor(np.eye(d), requires_grad=True),
        b1=ad.Tensor(np.zeros(d), requires_grad=True),
        w2=ad.Tensor(np.eye(d), requires_grad=True),
        b2=ad.Tensor(np.zeros(d), requires_grad=True),
    )
    return gin.GinParams(embedding=ad.Tensor(embeddings, requires_grad=True), layers=[layer])


def _graph(n, edges, types=None, gid="g"):
    return Graph(
        id=gid,
        node_types=_frozen(np.array(types if types is not None else [0] * n, dtype=np.int64)),
        edges=_frozen(np.array(edges, dtype=np.int64).reshape(len(edges), 2)),
        label=0.0,
        split="train",
    )


def test_two_node_path_sum_aggregation():
    params = _identity_gin(2, np.array([[1.0], [2.0]]))
    batch = collate([_graph(2, [[0, 1]], types=[0, 1])])
    h = gin.encode(params, batch)
    np.testing.assert_array_equal(h.data, [[3.0], [3.0]])


def test_zero_edges_keeps_self_term_only():
    params = _identity_gin(2, np.array([[1.0], [2.0]]))
    batch = collate([_graph(2, [], types=[0, 1])])
    h = gin.encode(params, batch)
    np.testing.assert_array_equal(h.data, [[1.0], [2.0]])


def test_readout_is_segment_mean():
    h = ad.Tensor(np.array([[1.0], [3.0]]))
    z = gin.readout(h, np.array([2]))
    np.testing.assert_array_equal(z.data, [[2.0]])


def test_identical_graphs_give_identical_readout_rows():
    rng = np.random.default_rng(0)
    params = gin.init_gin(gin.GinConfig(node_type_count=4, num_layers=2, hidden_dim=8), rng)
    g = _graph(3, [[0, 1], [1, 2]], types=[1, 2, 3])
    batch = collate([g, g, g])
    z = gin.readout(gin.encode(params, batch), batch.segment_offsets).data
    assert np.array_equal(z[0], z[1]) and np.array_equal(z[1], z[2])


def test_out_of_range_node_type_rejected():
    params = _identity_gin(2, np.array([[1.0], [2.0]]))
    batch = collate([_graph(2, [[0, 1]], types=[0, 5])])
    with pytest.raises(ContractError, match="node type"):
        gin.encode(params, batch)


def test_zero_final_layer_scores_exactly_half():
    rng = np.random.default_rng(1)
    params = gin.init_gin(gin.GinConfig(node_type_count=3, num_layers=2, hidden_dim=4), rng)
    params.layers[-1].w2 = ad.Tensor(np.zeros((4, 4)), requires_grad=True)
    params.layers[-1].b2 = ad.Tensor(np.zeros(4), requires_grad=True)
    batch = collate([_graph(3, [[0, 1], [0, 2]], types=[0, 1, 2])])
    s = gin.score(params, batch)
    np.testing.assert_array_equal(s.data, np.full((3, 4), 0.5))


def test_scores_strictly_inside_unit_interval():
    rng = np.random.default_rng(2)
    params = gin.init_gin(gin.GinConfig(node_type_count=8, num_layers=3, hidden_dim=6), rng)
    graphs, _ = generate(SynthSpec(n_train=6, n_val=1, n_test=1, seed=0))
    batch = collate([g for g in graphs if g.split == "train"])
    s = gin.score(params, batch).data
    assert s.shape == (batch.total_nodes, 6)
    assert np.all((s > 0.0) & (s < 1.0))


def _permute(g: Graph, rng) -> tuple[Graph, np.ndarray]:
    p = rng.permutation(g.num_nodes)
    types = np.empty_like(g.node_types)
    types[p] = g.node_types
    edges = np.sort(p[g.edges], axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))] if edges.size else edges
    return Graph(id=g.id, node_types=_frozen(types), edges=_frozen(edges), label=g.label, split=g.split, env=g.env), p


@given(st.integers(0, 500))
@settings(max_examples=30)
def test_encode_equivariant_readout_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    params = gin.init_gin(gin.GinConfig(node_type_count=8, num_layers=3, hidden_dim=5), rng)
    graphs, _ = generate(SynthSpec(n_train=2, n_val=1, n_test=1, seed=seed, base_nodes=(5, 9)))
    g = graphs[int(rng.integers(0, 2))]
    perm_g, p = _permute(g, rng)
    b0, b1 = collate([g]), collate([perm_g])
    h0 = gin.encode(params, b0).data
    h1 = gin.encode(params, b1).data
    assert np.max(np.abs(h1[p] - h0)) <= 1e-12
    s0, s1 = gin.score(params, b0).data, gin.score(params, b1).data
    assert np.max(np.abs(s1[p] - s0)) <= 1e-12
    z0 = gin.readout(gin.encode(params, b0), b0.segment_offsets).data
    z1 = gin.readout(gin.encode(params, b1), b1.segment_offsets).data
    assert np.max(np.abs(z1 - z0)) <= 1e-12


def test_encoder_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    cfg = gin.GinConfig(node_type_count=3, num_layers=2, hidden_dim=3)
    params = gin.init_gin(cfg, rng)
    batch = collate([_graph(3, [[0, 1], [1, 2]], types=[0, 1, 2]), _graph(2, [[0, 1]], types=[2, 0])])
    target = rng.normal(size=(2, 3))

    def loss_for_embedding(emb):
        trial = gin.GinParams(embedding=emb, layers=params.layers)
        z = gin.readout(gin.encode(trial, batch), batch.segment_offsets)
        return ad.mse(z, ad.Tensor(target))

    assert ad.grad_check(loss_for_embedding, params.embedding.data) < 1e-4

    def loss_for_w1(w1):
        layers = [gin.GinLayer(w1=w1, b1=params.layers[0].b1, w2=params.layers[0].w2, b2=params.layers[0].b2), params.layers[1]]
        trial = gin.GinParams(embedding=params.embedding, layers=layers)
        z = gin.readout(gin.encode(trial, batch), batch.segment_offsets)
        return ad.mse(z, ad.Tensor(target))

    assert ad.grad_check(loss_for_w1, params.layers[0].w1.data) < 1e-4
