import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravnorm.conv import (GravLayerParams, NodeBlock, attention_norm,
                           attention_orig, gravnet_conv, gravnetnorm_conv,
                           l1_normalize, norm_edge_weights, orig_edge_weights)
from gravnorm.engine import Tape, finite_diff_check
from gravnorm.errors import ParameterError
from gravnorm.mlp import MlpLayer, MlpParams, init_mlp
from gravnorm.spatial import knn_neighbors, radius_neighbors


def tiny_layer(rng, in_dim, s_dim=2, h_dim=3, out_dim=4, g=3.0, r=1.0):
    return GravLayerParams(
        s_mlp=init_mlp(rng, [in_dim, 8, s_dim], bias=False),
        h_mlp=init_mlp(rng, [in_dim, 8, h_dim]),
        out_mlp=init_mlp(rng, [in_dim + h_dim, 8, out_dim]),
        g=g, r=r)


class TestL1Normalize:
    def test_mixed_signs(self):
        np.testing.assert_allclose(l1_normalize(np.array([[1.0, -3.0]])),
                                   [[0.25, -0.75]])

    def test_zero_row_stays_zero(self):
        np.testing.assert_array_equal(l1_normalize(np.array([[0.0, 0.0]])),
                                      [[0.0, 0.0]])

    def test_random_rows_have_unit_norm(self):
        rng = np.random.default_rng(0)
        out = l1_normalize(rng.normal(size=(8, 5)))
        norms = np.sum(np.abs(out), axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_norm_property(self, seed):
        # the 1e-12 epsilon guard means unit norm is only guaranteed for
        # rows that are not themselves at epsilon scale
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(rng.integers(1, 10), rng.integers(1, 6))) \
            * 10.0 ** rng.integers(0, 4)
        input_norms = np.sum(np.abs(h), axis=1)
        norms = np.sum(np.abs(l1_normalize(h)), axis=1)
        checkable = input_norms >= 1e-3
        assert np.all(np.abs(norms[checkable] - 1.0) < 1e-9)
        assert np.all(norms[input_norms == 0.0] == 0.0)


class TestAttention:
    def test_norm_at_zero_distance(self):
        assert attention_norm(0.0, 3.0, 1.0) == 1.0

    def test_norm_at_radius_is_exp_minus_g(self):
        assert attention_norm(1.0, 3.0, 1.0) == pytest.approx(math.exp(-3.0), abs=1e-12)

    def test_norm_at_twice_radius(self):
        # exp(-3 * 4) evaluated independently at high precision
        assert attention_norm(2.0, 3.0, 1.0) == pytest.approx(6.144212353328210e-06,
                                                              rel=1e-12)

    def test_norm_strictly_decreasing(self):
        ds = np.linspace(0.0, 3.0, 50)
        vals = [attention_norm(d, 3.0, 1.0) for d in ds]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(0.0 < v <= 1.0 for v in vals)

    def test_orig_at_zero_distance_is_neighbor_size(self):
        assert attention_orig(0.0, 3.0, np.array([1.0, -1.0])) == 2.0

    def test_orig_unit_size_decay(self):
        assert attention_orig(1.0, 3.0, np.array([1.0])) == pytest.approx(math.exp(-3.0))

    def test_orig_zero_neighbor(self):
        for d in (0.0, 0.5, 2.0):
            assert attention_orig(d, 3.0, np.zeros(4)) == 0.0


def dense_norm_oracle(x, layer, n):
    """All-pairs aggregation with weights zeroed outside the radius."""
    from gravnorm.mlp import mlp_forward
    s = mlp_forward(layer.s_mlp, x).data
    h = mlp_forward(layer.h_mlp, x).data
    hhat = l1_normalize(h)
    agg = np.zeros_like(hhat)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = np.linalg.norm(s[i] - s[j])
            if d <= layer.r:
                agg[i] += attention_norm(d, layer.g, layer.r) * hhat[j]
    return mlp_forward(layer.out_mlp, np.concatenate([x, agg], axis=1)).data


def dense_orig_oracle(x, layer, k, n):
    """All-pairs aggregation restricted to brute-force top-k neighbor sets."""
    from gravnorm.mlp import mlp_forward
    s = mlp_forward(layer.s_mlp, x).data
    h = mlp_forward(layer.h_mlp, x).data
    hhat = l1_normalize(h)
    agg = np.zeros_like(hhat)
    for i in range(n):
        ranked = sorted((np.linalg.norm(s[i] - s[j]), j)
                        for j in range(n) if j != i)
        for d, j in ranked[:min(k, n - 1)]:
            agg[i] += attention_orig(d, layer.g, h[j]) * hhat[j]
    return mlp_forward(layer.out_mlp, np.concatenate([x, agg], axis=1)).data


class TestGravnetNormConv:
    def test_single_node_zero_aggregate(self):
        rng = np.random.default_rng(0)
        layer = tiny_layer(rng, in_dim=3)
        x = rng.normal(size=(1, 3))
        tape = Tape()
        out, edges = gravnetnorm_conv(NodeBlock(tape.leaf(x)), layer, tape)
        assert len(edges) == 0
        expected = dense_norm_oracle(x, layer, 1)
        np.testing.assert_allclose(out.features.data, expected, atol=1e-12)

    def test_identical_twins_exchange_unit_weight(self):
        rng = np.random.default_rng(1)
        layer = tiny_layer(rng, in_dim=3)
        x = np.tile(rng.normal(size=(1, 3)), (2, 1))
        tape = Tape()
        s_val = tape.leaf(np.zeros((2, 2)))
        h = tape.leaf(rng.normal(size=(2, 3)))
        hhat = tape.l1_normalize_rows(h)
        edges = radius_neighbors(np.zeros((2, 2)), layer.r)
        w = norm_edge_weights(tape, s_val, edges, layer.g, layer.r)
        np.testing.assert_allclose(w.data, np.ones((2, 1)), atol=1e-12)
        msg = tape.mul(tape.gather_rows(hhat, edges.dst), w)
        agg = tape.segment_sum(msg, edges.src, 2)
        np.testing.assert_allclose(agg.data[0], hhat.data[1], atol=1e-12)
        np.testing.assert_allclose(agg.data[1], hhat.data[0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 51))
        layer = tiny_layer(rng, in_dim=4, r=1.5)
        x = rng.normal(size=(n, 4))
        tape = Tape()
        out, _ = gravnetnorm_conv(NodeBlock(tape.leaf(x)), layer, tape)
        np.testing.assert_allclose(out.features.data, dense_norm_oracle(x, layer, n),
                                   atol=1e-10)

    def test_aggregate_l1_bounded_by_degree(self):
        rng = np.random.default_rng(9)
        n = 30
        layer = tiny_layer(rng, in_dim=4, r=2.0)
        x = rng.normal(size=(n, 4))
        tape = Tape()
        from gravnorm.mlp import mlp_forward
        s = mlp_forward(layer.s_mlp, x).data
        h = tape.l1_normalize_rows(tape.leaf(mlp_forward(layer.h_mlp, x).data))
        edges = radius_neighbors(s, layer.r)
        w = norm_edge_weights(tape, tape.leaf(s), edges, layer.g, layer.r)
        agg = tape.segment_sum(tape.mul(tape.gather_rows(h, edges.dst), w),
                               edges.src, n)
        degrees = np.bincount(edges.src, minlength=n)
        norms = np.sum(np.abs(agg.data), axis=1)
        assert np.all(norms <= degrees + 1e-9)


class TestGravnetConv:
    def test_single_node(self):
        rng = np.random.default_rng(2)
        layer = tiny_layer(rng, in_dim=3)
        x = rng.normal(size=(1, 3))
        tape = Tape()
        out, edges = gravnet_conv(NodeBlock(tape.leaf(x)), layer, 4, tape)
        assert len(edges) == 0
        np.testing.assert_allclose(out.features.data,
                                   dense_orig_oracle(x, layer, 4, 1), atol=1e-12)

    def test_identical_twins_restore_h(self):
        # at distance 0 the twin's message is |h|_1 * hhat = h itself
        rng = np.random.default_rng(3)
        tape = Tape()
        h = tape.leaf(rng.normal(size=(2, 3)))
        s_val = tape.leaf(np.zeros((2, 2)))
        edges = knn_neighbors(np.zeros((2, 2)), 1)
        w = orig_edge_weights(tape, s_val, h, edges, 3.0)
        msg = tape.mul(tape.gather_rows(tape.l1_normalize_rows(h), edges.dst), w)
        agg = tape.segment_sum(msg, edges.src, 2)
        np.testing.assert_allclose(agg.data[0], h.data[1], rtol=1e-9)
        np.testing.assert_allclose(agg.data[1], h.data[0], rtol=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(10, 51))
        layer = tiny_layer(rng, in_dim=4)
        x = rng.normal(size=(n, 4))
        tape = Tape()
        out, _ = gravnet_conv(NodeBlock(tape.leaf(x)), layer, 4, tape)
        np.testing.assert_allclose(out.features.data,
                                   dense_orig_oracle(x, layer, 4, n), atol=1e-10)

    def test_bad_k(self):
        rng = np.random.default_rng(4)
        layer = tiny_layer(rng, in_dim=3)
        tape = Tape()
        with pytest.raises(ParameterError):
            gravnet_conv(NodeBlock(tape.leaf(np.zeros((3, 3)))), layer, 0, tape)


class TestScaleBehavior:
    """Messages under h -> c*h with the embedding held fixed."""

    def _messages(self, s, h, edges, variant, g=3.0, r=1.0):
        tape = Tape()
        s_val, h_val = tape.leaf(s), tape.leaf(h)
        hhat = tape.l1_normalize_rows(h_val)
        if variant == "norm":
            w = norm_edge_weights(tape, s_val, edges, g, r)
        else:
            w = orig_edge_weights(tape, s_val, h_val, edges, g)
        return tape.mul(tape.gather_rows(hhat, edges.dst), w).data

    @pytest.mark.parametrize("c", [0.1, 10.0])
    def test_norm_messages_invariant(self, c):
        rng = np.random.default_rng(5)
        s = rng.normal(size=(12, 3))
        h = rng.normal(size=(12, 4))
        edges = radius_neighbors(s, 1.5)
        base = self._messages(s, h, edges, "norm")
        scaled = self._messages(s, h * c, edges, "norm")
        np.testing.assert_allclose(scaled, base, atol=1e-12)

    @pytest.mark.parametrize("c", [0.1, 10.0])
    def test_orig_messages_scale_with_sender(self, c):
        rng = np.random.default_rng(6)
        s = rng.normal(size=(12, 3))
        h = rng.normal(size=(12, 4))
        edges = knn_neighbors(s, 3)
        base = self._messages(s, h, edges, "original")
        j = 5
        h2 = h.copy()
        h2[j] *= c
        scaled = self._messages(s, h2, edges, "original")
        from_j = edges.dst == j
        np.testing.assert_allclose(scaled[from_j], c * base[from_j], rtol=1e-10)
        np.testing.assert_allclose(scaled[~from_j], base[~from_j], rtol=1e-12)


def test_truncation_bound():
    # anything the radius graph excludes would have weight below exp(-G)
    rng = np.random.default_rng(7)
    s = rng.normal(size=(40, 3))
    g, r = 3.0, 1.0
    edges = radius_neighbors(s, r)
    included = set(zip(edges.src.tolist(), edges.dst.tolist()))
    bound = math.exp(-g)
    for i in range(40):
        for j in range(40):
            if i != j and (i, j) not in included:
                d = np.linalg.norm(s[i] - s[j])
                assert attention_norm(d, g, r) < bound
    assert bound < 0.05


@pytest.mark.parametrize("variant", ["norm", "original"])
def test_conv_permutation_equivariance(variant):
    rng = np.random.default_rng(8)
    layer = tiny_layer(rng, in_dim=4, r=1.2)
    x = rng.normal(size=(15, 4))
    perm = rng.permutation(15)

    def run(arr):
        tape = Tape()
        block = NodeBlock(tape.leaf(arr))
        if variant == "norm":
            out, _ = gravnetnorm_conv(block, layer, tape)
        else:
            out, _ = gravnet_conv(block, layer, 4, tape)
        return out.features.data

    np.testing.assert_allclose(run(x[perm]), run(x)[perm], atol=1e-9)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    n = 8
    x = rng.normal(size=(n, 3))
    layer = tiny_layer(rng, in_dim=3, r=2.0)

    # freeze the topology once so perturbations keep the same selection
    tape0 = Tape(record=False)
    _, frozen = gravnetnorm_conv(NodeBlock(tape0.leaf(x)), layer, tape0)

    arrays = {}
    for tag, mlp in (("s", layer.s_mlp), ("h", layer.h_mlp), ("o", layer.out_mlp)):
        for i, l in enumerate(mlp.layers):
            arrays[f"{tag}{i}w"] = l.weight
            if l.bias is not None:
                arrays[f"{tag}{i}b"] = l.bias

    def f(tape, vs):
        def rebuild(tag, mlp):
            return MlpParams([
                MlpLayer(vs[f"{tag}{i}w"],
                         vs[f"{tag}{i}b"] if l.bias is not None else None,
                         l.activation)
                for i, l in enumerate(mlp.layers)])
        lp = GravLayerParams(rebuild("s", layer.s_mlp), rebuild("h", layer.h_mlp),
                             rebuild("o", layer.out_mlp), g=layer.g, r=layer.r)
        out, _ = gravnetnorm_conv(NodeBlock(tape.leaf(x)), lp, tape,
                                  frozen_edges=frozen)
        return tape.mean_all(out.features)

    assert finite_diff_check(f, arrays, 1e-6) < 1e-4
