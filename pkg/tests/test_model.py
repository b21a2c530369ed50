import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relatt.errors import ConfigError, ContractError
from relatt.graph import FeatureSource, augment
from relatt.model import (
    AttentionMap,
    ModelConfig,
    attention_logits,
    attention_normalize,
    basis_expand,
    bce_loss,
    distmult_score,
    distmult_scores,
    embed,
    init_params,
    model_forward,
    propagate_layer,
)
from relatt.numeric import as_tensor, evaluate_with_gradients

from conftest import make_graph
from oracles import build_edges, dense_forward, dense_layer, edge_logit, naive_basis, node_softmax, random_graph


def random_params(cfg, feats, k2, seed):
    """Initialized params with every attention vector randomized (init leaves them at zero)."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, feats, k2, rng)
    for name in params:
        if name.endswith("attn_a"):
            params[name] = rng.normal(size=params[name].shape)
    return params


def _instance(seed, n=12, k=3, m=30, d_feat=5, layers=2, dim=4, bases=2, **flags):
    rng = np.random.default_rng(seed)
    triples = random_graph(rng, n, k, m)
    kg = make_graph(triples, n, k)
    cfg = ModelConfig(layers=layers, dim=dim, bases=bases, **flags)
    g = augment(kg, add_inverse=cfg.inverse, add_self_loop=cfg.self_loop)
    feats = FeatureSource("file", rng.normal(size=(n, d_feat)))
    return triples, g, cfg, feats, random_params(cfg, feats, g.num_relations, seed + 1000)


class TestConfig:
    @pytest.mark.parametrize("kwargs,key", [({"dim": 0}, "dim"), ({"bases": 0}, "bases"), ({"layers": -1}, "layers"),
                                            ({"attn_dropout": 1.0}, "attn_dropout"),
                                            ({"attn_nonlinearity": "tanh"}, "attn_nonlinearity")])
    def test_invalid(self, kwargs, key):
        with pytest.raises(ConfigError) as exc:
            ModelConfig(**kwargs)
        assert exc.value.key == key


class TestAttentionLogits:
    def test_zero_vector_gives_zero_logits(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(0)
        e = attention_logits(rng.normal(size=(12, 3)), rng.normal(size=(6, 3)), g, rng.normal(size=(3, 3)),
                             np.zeros(9)).value
        assert np.all(e == 0.0)

    def test_identity_and_ones_sum_components(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(1)
        h, m = rng.normal(size=(12, 3)), rng.normal(size=(6, 3))
        e = attention_logits(h, m, g, np.eye(3), np.ones(9)).value
        expected = h[g.heads].sum(1) + m[g.rels].sum(1) + h[g.tails].sum(1)
        assert np.allclose(e, expected, atol=1e-12)

    def test_per_edge_oracle(self):
        rng = np.random.default_rng(2)
        triples = np.array([[0, 0, 1], [1, 1, 2], [2, 0, 3], [3, 1, 0]])
        g = augment(make_graph(triples, 4, 2), add_inverse=False)
        h, m, W, a = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=9)
        e = attention_logits(h, m, g, W, a).value
        for i in range(g.num_edges):
            ref = edge_logit(h, m, W, a, int(g.heads[i]), int(g.rels[i]), int(g.tails[i]))
            assert abs(e[i] - ref) < 1e-12

    def test_leaky_relu_flag(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(3)
        args = (rng.normal(size=(12, 3)), rng.normal(size=(6, 3)), g, rng.normal(size=(3, 3)), rng.normal(size=9))
        plain = attention_logits(*args).value
        leaky = attention_logits(*args, nonlinearity="leaky_relu").value
        assert np.allclose(leaky, np.where(plain > 0, plain, 0.2 * plain))

    def test_dimension_mismatch(self, small_graph):
        g = augment(small_graph)
        with pytest.raises(ContractError):
            attention_logits(np.ones((12, 3)), np.ones((6, 3)), g, np.ones((4, 3)), np.ones(9))
        with pytest.raises(ContractError):
            attention_logits(np.ones((12, 3)), np.ones((6, 3)), g, np.ones((3, 3)), np.ones(8))


class TestAttentionNormalize:
    def _graph(self, triples, n, k):
        return augment(make_graph(triples, n, k), add_inverse=False)

    def test_single_neighbor(self):
        g = self._graph([[0, 0, 1]], 2, 1)
        assert attention_normalize(np.array([3.7]), g).coefficients.value[0] == 1.0

    def test_equal_logits(self):
        g = self._graph([[0, 0, 1], [0, 0, 2]], 3, 1)
        assert np.array_equal(attention_normalize(np.array([0.4, 0.4]), g).coefficients.value, [0.5, 0.5])

    def test_closed_form(self):
        g = self._graph([[0, 0, 1], [0, 1, 2]], 3, 2)
        a = attention_normalize(np.array([math.log(2), 0.0]), g).coefficients.value
        assert np.max(np.abs(a - [2 / 3, 1 / 3])) < 1e-12

    def test_normalizes_across_relations(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(0)
        amap = attention_normalize(rng.normal(size=g.num_edges) * 5, g)
        has_edges = np.bincount(g.heads, minlength=12) > 0
        assert np.all(np.abs(amap.group_sums()[has_edges] - 1.0) < 1e-12)

    def test_oracle(self, small_graph):
        g = augment(small_graph)
        logits = np.random.default_rng(1).normal(size=g.num_edges)
        edges = list(zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist()))
        ref = node_softmax(edges, logits.tolist(), 12)
        assert np.max(np.abs(attention_normalize(logits, g).coefficients.value - ref)) < 1e-12

    def test_wrong_length(self, small_graph):
        with pytest.raises(ContractError):
            attention_normalize(np.zeros(3), augment(small_graph))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 30), k=st.integers(1, 4), scale=st.floats(0.0, 50.0))
    def test_property_sums_and_range(self, seed, n, k, scale):
        rng = np.random.default_rng(seed)
        g = augment(make_graph(random_graph(rng, n, k, 3 * n), n, k))
        amap = attention_normalize(rng.normal(size=g.num_edges) * scale, g)
        alpha = amap.coefficients.value
        assert np.all((alpha >= 0) & (alpha <= 1))
        has_edges = np.bincount(g.heads, minlength=n) > 0
        assert np.all(np.abs(amap.group_sums()[has_edges] - 1.0) < 1e-9)


class TestBasisExpand:
    def test_single_basis_scales(self):
        v = np.random.default_rng(0).normal(size=(3, 2))
        w = basis_expand([v], np.array([[2.0], [-0.5]])).value
        assert np.array_equal(w[0], 2.0 * v) and np.array_equal(w[1], -0.5 * v)

    def test_one_hot_selects_basis(self):
        rng = np.random.default_rng(1)
        vs = [rng.normal(size=(3, 2)) for _ in range(3)]
        w = basis_expand(vs, np.eye(3)).value
        for b in range(3):
            assert np.array_equal(w[b], vs[b])

    def test_naive_sum(self):
        rng = np.random.default_rng(2)
        vs = [rng.normal(size=(4, 5)) for _ in range(3)]
        c = rng.normal(size=(4, 3))
        assert np.max(np.abs(basis_expand(vs, c).value - naive_basis(vs, c))) < 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            basis_expand([np.ones((2, 2))], np.ones((3, 2)))


class TestPropagateLayer:
    def test_isolated_node(self):
        g = augment(make_graph([[0, 0, 1]], 3, 1))
        rng = np.random.default_rng(0)
        h, W0 = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
        out = propagate_layer(h, None, g, rng.normal(size=(2, 2, 4)), W0).value
        assert np.allclose(out[2], h[2] @ W0, atol=1e-14)

    def test_single_neighbor(self):
        g = augment(make_graph([[0, 0, 1]], 2, 1), add_inverse=False)
        rng = np.random.default_rng(1)
        h, W0, mats = rng.normal(size=(2, 3)), rng.normal(size=(3, 2)), rng.normal(size=(1, 3, 2))
        attn = attention_normalize(np.array([0.3]), g)
        out = propagate_layer(h, attn, g, mats, W0).value
        assert np.allclose(out[0], 1.0 * (1 / 1) * h[1] @ mats[0] + h[0] @ W0, atol=1e-14)
        assert np.allclose(out[1], h[1] @ W0, atol=1e-14)

    def test_dense_oracle_12_nodes(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(2)
        h, mats, W0 = rng.normal(size=(12, 3)), rng.normal(size=(6, 3, 4)), rng.normal(size=(3, 4))
        amap = attention_normalize(rng.normal(size=g.num_edges), g)
        out = propagate_layer(h, amap, g, mats, W0).value
        edges = list(zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist()))
        ref = dense_layer(h, edges, 6, mats, W0, amap.coefficients.value.tolist())
        assert np.max(np.abs(out - ref)) < 1e-10

    def test_without_self_loop(self, small_graph):
        g = augment(small_graph)
        rng = np.random.default_rng(3)
        h, mats = rng.normal(size=(12, 3)), rng.normal(size=(6, 3, 2))
        edges = list(zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist()))
        ref = dense_layer(h, edges, 6, mats, None)
        assert np.max(np.abs(propagate_layer(h, None, g, mats).value - ref)) < 1e-10

    def test_dimension_mismatch(self, small_graph):
        g = augment(small_graph)
        with pytest.raises(ContractError):
            propagate_layer(np.ones((11, 3)), None, g, np.ones((6, 3, 2)))


class TestModelForward:
    def test_zero_layers_is_identity(self, small_graph):
        feats = FeatureSource("file", np.random.default_rng(0).normal(size=(12, 5)))
        out = embed(augment(small_graph), feats, {}, ModelConfig(layers=0))
        assert np.array_equal(out, feats.values)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        triples, g, cfg, feats, params = _instance(seed)
        ref = dense_forward(triples, 12, 3, feats.values, params, cfg.layers, cfg.bases)
        assert np.max(np.abs(embed(g, feats, params, cfg) - ref)) < 1e-10

    def test_dense_oracle_attention_off_no_inverse(self):
        triples, g, cfg, feats, params = _instance(7, attention=False, inverse=False)
        ref = dense_forward(triples, 12, 3, feats.values, params, cfg.layers, cfg.bases,
                            attention=False, inverse=False)
        assert np.max(np.abs(embed(g, feats, params, cfg) - ref)) < 1e-10

    def test_uniform_attention_reduction(self):
        triples, g, cfg, feats, params = _instance(4)
        for name in params:
            if name.endswith("attn_a"):
                params[name] = np.zeros_like(params[name])
        res = model_forward(g, feats, params, cfg)
        for amap in res.attention:
            assert np.max(np.abs(amap.coefficients.value - 1.0 / g.head_degree)) < 1e-12
        # attention off, messages scaled by 1/|N_h| by hand
        h = as_tensor(feats.values)
        uniform = AttentionMap(as_tensor(1.0 / g.head_degree), g.heads, g.num_entities)
        for l in range(cfg.layers):
            mats = basis_expand([params[f"layer{l}.basis{b}"] for b in range(cfg.bases)], params[f"layer{l}.coeffs"])
            act = (lambda x: x) if l == cfg.layers - 1 else (lambda x: as_tensor(np.maximum(x.value, 0)))
            h = propagate_layer(h, uniform, g, mats, params[f"layer{l}.self_W0"], act)
        assert np.max(np.abs(res.embeddings.value - h.value)) < 1e-10

    def test_training_mode_deterministic(self):
        _, g, _, feats, params = _instance(5)
        cfg = ModelConfig(layers=2, dim=4, bases=2, hidden_dropout=0.3, attn_dropout=0.2)
        a = model_forward(g, feats, params, cfg, np.random.default_rng(9), training=True).embeddings.value
        b = model_forward(g, feats, params, cfg, np.random.default_rng(9), training=True).embeddings.value
        c = model_forward(g, feats, params, cfg).embeddings.value
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, c)

    def test_dropout_needs_rng(self):
        _, g, _, feats, params = _instance(5)
        cfg = ModelConfig(layers=2, dim=4, bases=2, hidden_dropout=0.3)
        with pytest.raises(ContractError):
            model_forward(g, feats, params, cfg, training=True)

    def test_attention_off_zero_gradients(self):
        triples, g, cfg, feats, params = _instance(6, attention=False)
        labels = np.ones(len(triples))

        def program(p):
            emb = model_forward(g, feats, p, cfg).embeddings
            return bce_loss(distmult_scores(emb, p["distmult_diag"], triples), labels)

        _, grads = evaluate_with_gradients(program, params)
        attn_names = [n for n in params if "attn" in n or "rel_feats" in n]
        assert attn_names
        for n in attn_names:
            assert np.all(grads[n] == 0.0)
        assert np.any(grads["layer0.coeffs"] != 0.0)

    def test_edge_order_matches_oracle(self, small_graph):
        g = augment(small_graph)
        assert sorted(zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist())) == \
            sorted(build_edges(small_graph.triples, 3, True))


class TestDecoder:
    def test_examples(self):
        assert distmult_score([1, 0], [1, 1], [1, 0]) == 1.0
        assert distmult_score([1, 2], [3, 4], [5, 6]) == 63.0
        assert distmult_score([0.3, -2.0], [0, 0], [9.0, 1.5]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            distmult_score([1, 2], [1, 2, 3], [1, 2])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8).flatmap(
        lambda h: st.tuples(st.just(h), st.lists(st.floats(-1e3, 1e3), min_size=len(h), max_size=len(h)),
                            st.lists(st.floats(-1e3, 1e3), min_size=len(h), max_size=len(h)))))
    def test_symmetric(self, hdt):
        h, d, t = hdt
        assert distmult_score(h, d, t) == distmult_score(t, d, h)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        emb, diag = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
        triples = np.array([[0, 1, 2], [5, 0, 5], [3, 2, 1]])
        s = distmult_scores(emb, diag, triples).value
        for i, (h, r, t) in enumerate(triples):
            assert abs(s[i] - distmult_score(emb[h], diag[r], emb[t])) < 1e-12


class TestLoss:
    def test_examples(self):
        assert abs(bce_loss(np.array([0.0]), np.array([1])).item() - math.log(2)) < 1e-15
        assert bce_loss(np.array([100.0]), np.array([1])).item() < 1e-10
        assert abs(bce_loss(np.array([0.0, 0.0]), np.array([1, 0])).item() - math.log(2)) < 1e-15

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            bce_loss(np.zeros(0), np.zeros(0))

    def test_saturated_negative_is_finite(self):
        assert bce_loss(np.array([-800.0]), np.array([1])).item() == pytest.approx(800.0)
