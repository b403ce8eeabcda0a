"""Autodiff engine, primitive ops and layers against brute-force oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from esihdr import functional as F
from esihdr import tensor as T
from esihdr.gradcheck import Probe, gradcheck
from esihdr.params import ParamStore
from esihdr.tensor import Tensor, no_grad, topo_order

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def conv_loop(x, w, b):
    """Direct summation with zero 'same' padding."""
    cin, H, W = x.shape
    cout, _, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((cout, H, W))
    for o in range(cout):
        for i in range(H):
            for j in range(W):
                s = b[o]
                for c in range(cin):
                    for di in range(k):
                        for dj in range(k):
                            y, xx = i + di - p, j + dj - p
                            if 0 <= y < H and 0 <= xx < W:
                                s += w[o, c, di, dj] * x[c, y, xx]
                out[o, i, j] = s
    return out


class TestTensorBasics:
    def test_rank_cap(self):
        with pytest.raises(ValueError, match="rank"):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_backward_needs_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_grad_shape_matches_data(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        (a * b).sum().backward()
        assert a.grad.shape == a.shape and b.grad.shape == b.shape
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_no_grad_builds_no_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = a * 2.0
        assert not y.requires_grad and y._parents == ()
        assert T.grad_enabled()

    def test_topological_order(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = a * 2.0
        c = b + a
        d = T.tsum(c * b)
        order = topo_order(d)
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for parent in node._parents:
                if parent.requires_grad:
                    assert pos[id(parent)] < pos[id(node)]
        assert order[-1] is d

    def test_shared_subexpression_accumulates(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        (a * a + a).sum().backward()
        np.testing.assert_allclose(a.grad, [7.0])

    def test_division_forms(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        b = Tensor(np.array([2.0]), requires_grad=True)
        (a / b + 1.0 / b + a / 4.0).sum().backward()
        np.testing.assert_allclose(a.grad, [0.5 + 0.25])
        np.testing.assert_allclose(b.grad, [-3.0 / 4.0 - 1.0 / 4.0])

    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
    def test_broadcast_add_gradient_sums(self, a, b):
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        (ta + tb).sum().backward()
        np.testing.assert_array_equal(ta.grad, np.ones((3, 4)))
        np.testing.assert_array_equal(tb.grad, np.full(4, 3.0))

    @given(arrays(np.float64, (2, 5), elements=finite))
    def test_forward_outputs_finite(self, a):
        t = Tensor(a)
        for y in (T.sigmoid(t), T.softmax(t), T.exp(T.clip(t, -5, 5)), F.activate(t, "lrelu")):
            assert np.all(np.isfinite(y.data))

    def test_getitem_advanced_scatter(self):
        a = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        a[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_array_equal(a.grad, [[2, 2], [0, 0], [1, 1]])

    def test_power_rejects_tensor_exponent(self):
        with pytest.raises(TypeError):
            T.power(Tensor(np.ones(2)), Tensor(np.ones(1)))


class TestActivations:
    def test_rrelu_is_negative_part(self):
        y = F.activate(Tensor(np.array([-2.0, 3.0])), "rrelu_paper")
        np.testing.assert_array_equal(y.data, [2.0, 0.0])

    def test_relu_and_sigmoid(self):
        np.testing.assert_array_equal(F.activate(Tensor(np.array([-1.0, 1.0])), "relu").data, [0, 1])
        assert F.activate(Tensor(np.array(0.0)), "sigmoid").item() == 0.5

    def test_lrelu_slope(self):
        y = F.activate(Tensor(np.array([-1.0, 2.0])), "lrelu")
        np.testing.assert_array_equal(y.data, [-F.LRELU_SLOPE, 2.0])

    def test_sigmoid_extremes_stable(self):
        y = T.sigmoid(Tensor(np.array([-800.0, 800.0])))
        np.testing.assert_array_equal(y.data, [0.0, 1.0])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            F.activate(Tensor(np.ones(1)), "gelu")


class TestConv2d:
    def test_identity_1x1(self):
        x = np.random.default_rng(0).standard_normal((3, 5, 5))
        w = np.eye(3).reshape(3, 3, 1, 1)
        np.testing.assert_array_equal(F.conv2d(x, w, np.zeros(3)).data, x)

    def test_depthwise_delta(self):
        x = np.random.default_rng(1).standard_normal((2, 6, 6))
        w = np.zeros((2, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(F.conv2d(x, w, np.zeros(2), depthwise=True).data, x)

    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    def test_matches_direct_summation(self, k):
        rng = np.random.default_rng(k)
        x = rng.standard_normal((2, 4, 4))
        w = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(F.conv2d(x, w, b).data, conv_loop(x, w, b), atol=1e-12)

    def test_depthwise_matches_direct_summation(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 5, 5))
        w = rng.standard_normal((3, 1, 3, 3))
        full = np.zeros((3, 3, 3, 3))
        for c in range(3):
            full[c, c] = w[c, 0]
        got = F.conv2d(x, w, depthwise=True).data
        np.testing.assert_allclose(got, conv_loop(x, full, np.zeros(3)), atol=1e-12)

    def test_valid_padding_shrinks(self):
        y = F.conv2d(np.ones((1, 2, 6, 6)), np.ones((1, 2, 3, 3)), padding=0)
        assert y.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(y.data, 18.0)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(ValueError, match="channel axis"):
            F.conv2d(np.ones((3, 4, 4)), np.ones((2, 2, 3, 3)))
        with pytest.raises(ValueError, match="channel axis"):
            F.conv2d(np.ones((3, 4, 4)), np.ones((2, 1, 3, 3)), depthwise=True)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        x, w, b = (Tensor(rng.standard_normal(s)) for s in [(1, 2, 5, 5), (3, 2, 3, 3), (3,)])
        probe = Probe(0)
        assert gradcheck(lambda: probe(F.conv2d(x, w, b)), inputs=[x, w, b]) < 1e-6


class TestAttention:
    def test_single_token_returns_v(self):
        rng = np.random.default_rng(0)
        q, k, v = (rng.standard_normal((1, 1, 2, 3)) for _ in range(3))
        out, attn = F.scaled_attention(q, k, v, 2.0)
        np.testing.assert_array_equal(attn.data, [[[1.0]]])
        np.testing.assert_allclose(out.data, v)

    def test_equal_logits_average_v(self):
        rng = np.random.default_rng(1)
        q = np.zeros((1, 4, 2, 3))
        k = rng.standard_normal((1, 4, 2, 3))
        v = rng.standard_normal((1, 4, 2, 3))
        out, _ = F.scaled_attention(q, k, v, 1.0)
        expect = np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape)
        np.testing.assert_allclose(out.data, expect, atol=1e-15)

    def test_matches_explicit_softmax(self):
        rng = np.random.default_rng(2)
        q, k, v = (rng.standard_normal((1, 4, 2, 3)) for _ in range(3))
        s = 1.7
        out, attn = F.scaled_attention(q, k, v, s)
        Q, K, V = q.reshape(4, 6), k.reshape(4, 6), v.reshape(4, 6)
        ref = np.zeros((4, 4))
        for i in range(4):
            logits = [sum(Q[i, d] * K[j, d] for d in range(6)) / s for j in range(4)]
            m = max(logits)
            e = [math.exp(z - m) for z in logits]
            ref[i] = [x / sum(e) for x in e]
        np.testing.assert_allclose(attn.data[0], ref, atol=1e-12)
        np.testing.assert_allclose(out.data.reshape(4, 6), ref @ V, atol=1e-12)

    def test_token_mismatch_rejected(self):
        with pytest.raises(ValueError, match="token"):
            F.scaled_attention(np.ones((1, 2, 2, 2)), np.ones((1, 2, 2, 3)), np.ones((1, 2, 2, 3)), 1.0)

    def test_temperature_initial_value(self):
        s = F.temperature(Tensor(np.zeros(1)), 64)
        assert s.item() == 8.0

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (1, 3, 2, 2), elements=finite), st.floats(0.1, 10))
    def test_rows_are_distributions(self, q, s):
        _, attn = F.scaled_attention(q, q[:, ::-1], q, s)
        np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-12)
        assert np.all(attn.data >= 0)

    def test_window_partition_round_trip(self):
        x = np.arange(2 * 3 * 8 * 4, dtype=float).reshape(2, 3, 8, 4)
        tok = F.window_partition(Tensor(x), 4)
        assert tok.shape == (2 * 2 * 1, 16, 3)
        # first token of the second window of batch 0 is pixel (4, 0)
        np.testing.assert_array_equal(tok.data[1, 0], x[0, :, 4, 0])
        np.testing.assert_array_equal(F.window_merge(tok, x.shape, 4).data, x)

    def test_window_partition_indivisible(self):
        with pytest.raises(ValueError, match="pad by 2 rows"):
            F.window_partition(Tensor(np.ones((1, 1, 6, 8))), 4)

    def test_window_attention_is_local(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 8, 8))
        y1 = F.window_attention(x, x, x, 4).data
        x2 = x.copy()
        x2[..., 4:, 4:] += 1.0  # only the bottom-right window changes
        y2 = F.window_attention(x2, x2, x2, 4).data
        np.testing.assert_array_equal(y1[..., :4, :], y2[..., :4, :])
        np.testing.assert_array_equal(y1[..., 4:, :4], y2[..., 4:, :4])


class TestNormalization:
    def test_layer_norm_constant_input(self):
        y = F.layer_norm(np.full((1, 3, 2, 2), 5.0), np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_layer_norm_affine_collapse(self):
        x = np.random.default_rng(0).standard_normal((1, 3, 2, 2))
        y = F.layer_norm(x, np.zeros(3), np.full(3, 2.5))
        np.testing.assert_array_equal(y.data, 2.5)

    def test_layer_norm_two_pass(self):
        x = np.random.default_rng(1).standard_normal((2, 4, 3, 3))
        y = F.layer_norm(x, np.ones(4), np.zeros(4)).data
        for b in range(2):
            for i in range(3):
                for j in range(3):
                    v = x[b, :, i, j]
                    m = sum(v) / 4
                    var = sum((a - m) ** 2 for a in v) / 4
                    np.testing.assert_allclose(y[b, :, i, j], (v - m) / math.sqrt(var + 1e-5), atol=1e-10)

    def test_batch_norm_two_pass_and_running_stats(self):
        x = np.random.default_rng(2).standard_normal((2, 3, 4, 4)) * 3 + 1
        st_ = F.RunningStats(3)
        y = F.batch_norm(x, np.ones(3), np.zeros(3), st_).data
        for c in range(3):
            v = x[:, c].ravel()
            m = sum(v) / v.size
            var = sum((a - m) ** 2 for a in v) / v.size
            np.testing.assert_allclose(y[:, c], (x[:, c] - m) / math.sqrt(var + 1e-5), atol=1e-10)
            np.testing.assert_allclose(st_.mean[c], 0.1 * m, atol=1e-12)
            np.testing.assert_allclose(st_.var[c], 0.9 + 0.1 * var, atol=1e-12)

    def test_batch_norm_eval_uses_running_stats(self):
        st_ = F.RunningStats(2)
        st_.mean[:] = [1.0, -1.0]
        st_.var[:] = [4.0, 1.0]
        x = np.ones((1, 2, 1, 1))
        y = F.batch_norm(x, np.ones(2), np.zeros(2), st_, training=False).data
        np.testing.assert_allclose(y.ravel(), [0.0, 2.0 / math.sqrt(1 + 1e-5)])

    def test_batch_norm_constant_channel(self):
        y = F.batch_norm(np.full((2, 1, 3, 3), 7.0), np.ones(1), np.zeros(1), F.RunningStats(1))
        np.testing.assert_array_equal(y.data, 0.0)


class TestPoolingAndSobel:
    def test_gap_constant_and_identity(self):
        np.testing.assert_array_equal(F.gap(np.full((2, 3, 3), 4.0)).data.ravel(), [4.0, 4.0])
        x = np.random.default_rng(0).standard_normal((3, 1, 1))
        np.testing.assert_array_equal(F.gap(x).data, x)

    def test_gap_sum_oracle(self):
        x = np.random.default_rng(1).standard_normal((3, 4, 4))
        ref = [sum(x[c].ravel()) / 16 for c in range(3)]
        np.testing.assert_allclose(F.gap(x).data.ravel(), ref, atol=1e-12)

    def test_sobel_ramp(self):
        ramp = np.tile(np.arange(6.0), (5, 1))[None]
        g = F.sobel(ramp).data
        np.testing.assert_array_equal(g[0, 1:-1, 1:-1], 8.0)
        np.testing.assert_array_equal(g[1], 0.0)

    def test_reflect_index(self):
        np.testing.assert_array_equal(F._reflect_index(4, 2), [2, 1, 0, 1, 2, 3, 2, 1])

    def test_sobel_constant(self):
        np.testing.assert_array_equal(F.sobel(np.full((2, 5, 5), 3.0)).data, 0.0)


class TestGradcheck:
    def test_linear_graph_exact(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal(5))
        w = rng.standard_normal(5)
        assert gradcheck(lambda: T.tsum(a * w), inputs=[a]) < 1e-9

    def test_constant_graph_zero_gradients(self):
        a = Tensor(np.ones(3))
        c = Tensor(np.array(2.0))
        gradcheck(lambda: c + T.tsum(a) * 0.0, inputs=[a])
        np.testing.assert_array_equal(a.grad, 0.0)

    def test_non_scalar_rejected(self):
        a = Tensor(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            gradcheck(lambda: a * 2.0, inputs=[a])

    def test_detects_wrong_gradient(self):
        a = Tensor(np.array([0.3, 0.7]))

        def bad():
            return T._make(np.array(np.sum(a.data**2)), (a,), lambda g: (g * a.data,), "bad")

        assert gradcheck(bad, inputs=[a]) > 0.1

    def test_param_store_and_report(self):
        store = ParamStore(0)
        w = store.normal("w", (3,), 1)
        err, name = gradcheck(lambda: T.tsum(T.exp(w)), params=store, report=True)
        assert err < 1e-8 and name.startswith("w[")

    def test_sampling_limits(self):
        a = Tensor(np.random.default_rng(0).standard_normal(50))
        calls = []

        def fn():
            calls.append(1)
            return T.tsum(a * a)

        gradcheck(fn, inputs=[a], max_per_tensor=4)
        assert len(calls) == 1 + 2 * 4
