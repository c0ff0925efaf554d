"""Autodiff engine: op values against hand/brute-force oracles, gradients against finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rpin.numcore as nc
from rpin.numcore import Parameter, Tensor, grad_check
from rpin.numcore import ops
from rpin.numcore.tensor import DeferredGrad

from conftest import t64


def weighted_sum(out, seed=1):
    """Scalarize an output with fixed random weights so every entry matters."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(w)).sum()


def naive_conv(x, w, b, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, ho, wo))
    for n in range(B):
        for o in range(O):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o] if b is not None else 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


class TestTensor:
    def test_grad_shape_matches_data(self):
        x = t64(np.ones((2, 3)))
        (x * 2.0).sum().backward()
        assert x.grad.shape == x.shape

    def test_accumulation_over_two_uses(self, rng):
        a = rng.normal(size=(3, 4))
        x = t64(a)
        y = (x * x).sum() + (x * 3.0).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * a + 3.0)

    def test_accumulation_equals_sum_of_single_uses(self, rng):
        a = rng.normal(size=(5,))
        x1 = t64(a)
        nc.relu(x1).sum().backward()
        x2 = t64(a)
        (x2 * x2).sum().backward()
        x = t64(a)
        (nc.relu(x).sum() + (x * x).sum()).backward()
        assert np.array_equal(x.grad, x1.grad + x2.grad)

    def test_backward_twice_accumulates(self):
        x = t64([1.0, 2.0])
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_non_scalar_backward_needs_grad(self):
        x = t64([1.0, 2.0])
        with pytest.raises(RuntimeError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = t64([1.0])
        with nc.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_deep_chain_does_not_recurse(self):
        x = t64([1.0])
        y = x
        for _ in range(5000):
            y = y * 1.0
        y.sum().backward()
        assert x.grad[0] == 1.0

    def test_integer_data_becomes_float32(self):
        assert Tensor([1, 2]).dtype == np.float32

    def test_deferred_grad_merge_and_materialize(self, rng):
        a1, b1, a2, b2 = (rng.normal(size=s) for s in ((3, 2), (3, 4), (5, 2), (5, 4)))
        d = DeferredGrad(a1, b1, key="w")
        assert d.merge(DeferredGrad(a2, b2, key="w"))
        assert not d.merge(DeferredGrad(a2, b2, key="other"))
        np.testing.assert_allclose(d.materialize(), a1.T @ b1 + a2.T @ b2)


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(nc.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_grad_mask(self):
        x = t64([-1.0, 0.5, 2.0, -3.0])
        nc.relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 1, 1, 0])

    def test_relu_idempotent(self, rng):
        x = Tensor(rng.normal(size=10))
        np.testing.assert_array_equal(nc.relu(nc.relu(x)).data, nc.relu(x).data)

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
    def test_broadcast_binary_grads(self, rng, op):
        a = t64(rng.normal(size=(3, 4)))
        b = t64(rng.uniform(0.5, 2.0, size=(4,)))
        f = {"add": nc.add, "sub": nc.sub, "mul": nc.mul, "div": ops.div}[op]
        rep = grad_check(lambda a, b: weighted_sum(f(a, b)), [a, b])
        assert rep.passed, str(rep)

    def test_exp_log_power_grads(self, rng):
        x = t64(rng.uniform(0.5, 2.0, size=(6,)))
        rep = grad_check(lambda x: weighted_sum(nc.log(nc.exp(x) + x ** 2.0)), [x])
        assert rep.passed, str(rep)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_random_seeds_elementwise_chain(self, seed):
        r = np.random.default_rng(seed)
        x = t64(r.normal(size=(3, 2)))
        y = t64(r.normal(size=(2,)))
        rep = grad_check(lambda x, y: weighted_sum(nc.relu(x * y + x) - y), [x, y])
        assert rep.passed, str(rep)


class TestShapeOps:
    def test_sum_tuple_axes(self, rng):
        x = t64(rng.normal(size=(2, 3, 4)))
        out = x.sum(axis=(0, 2))
        assert out.shape == (3,)
        rep = grad_check(lambda x: weighted_sum(x.sum(axis=(0, 2))), [x])
        assert rep.passed

    def test_mean_value(self):
        assert nc.mean(Tensor([1.0, 2.0, 3.0])).item() == pytest.approx(2.0)

    def test_reshape_transpose_getitem_grads(self, rng):
        x = t64(rng.normal(size=(2, 3, 4)))
        rep = grad_check(lambda x: weighted_sum(x.transpose(2, 0, 1).reshape(4, 6)[1:3, ::2]), [x])
        assert rep.passed

    def test_fancy_getitem_accumulates_repeats(self):
        x = t64([1.0, 2.0, 3.0])
        x[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_array_equal(x.grad, [2, 0, 1])

    def test_concat_stack_grads(self, rng):
        a, b = t64(rng.normal(size=(2, 3))), t64(rng.normal(size=(2, 1)))
        rep = grad_check(lambda a, b: weighted_sum(nc.concat([a, b, a], axis=1)), [a, b])
        assert rep.passed
        rep = grad_check(lambda a: weighted_sum(nc.stack([a, a * 2.0], axis=1)), [a])
        assert rep.passed

    def test_concat_channels(self, rng):
        one = Tensor(np.ones((1, 2, 2)))
        np.testing.assert_array_equal(nc.concat_channels([one]).data, one.data)
        two = nc.concat_channels([Tensor(np.zeros((1, 2, 2))), one])
        np.testing.assert_array_equal(two.data, np.stack([np.zeros((2, 2)), np.ones((2, 2))]))
        a, b = t64(rng.normal(size=(2, 3, 3))), t64(rng.normal(size=(1, 3, 3)))
        rep = grad_check(lambda a, b: weighted_sum(nc.concat_channels([a, b])), [a, b])
        assert rep.passed

    def test_concat_channels_spatial_mismatch(self):
        with pytest.raises(ValueError):
            nc.concat_channels([Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 3, 2)))])

    def test_matmul_grad(self, rng):
        a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(4, 2)))
        rep = grad_check(lambda a, b: weighted_sum(a @ b), [a, b])
        assert rep.passed


class TestLinear:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 4))
        out = nc.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x)

    def test_hand_value(self):
        out = nc.linear(Tensor([1.0, 2.0]), Tensor([[1.0, 1.0]]), Tensor([0.5]))
        np.testing.assert_allclose(out.data, [3.5])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError):
            nc.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    @pytest.mark.parametrize("rows", [3, 200])
    def test_grad_check_tight(self, rng, rows):
        x = t64(rng.normal(size=(rows, 5)))
        w = t64(rng.normal(size=(4, 5)))
        b = t64(rng.normal(size=(4,)))
        rep = grad_check(lambda x, w, b: weighted_sum(nc.linear(x, w, b)), [x, w, b], tol=1e-7, max_checks=40)
        assert rep.passed, str(rep)

    def test_weight_t_and_deferred_paths_agree(self, rng):
        x = t64(rng.normal(size=(6, 5)))
        w = t64(rng.normal(size=(4, 5)))
        # the same weight used twice exercises the merged deferred gradient
        y = nc.linear(x, w, weight_t=np.ascontiguousarray(w.data.T))
        y2 = nc.linear(nc.relu(y) @ Tensor(np.ones((4, 5))), w)
        weighted_sum(y2).backward()
        gw, gx = w.grad.copy(), x.grad.copy()
        rep = grad_check(lambda x, w: weighted_sum(nc.linear(nc.relu(nc.linear(x, w)) @ Tensor(np.ones((4, 5))), w)),
                         [x, w])
        assert rep.passed
        np.testing.assert_allclose(w.grad, gw, rtol=1e-12)
        np.testing.assert_allclose(x.grad, gx, rtol=1e-12)


class TestConv2d:
    def test_one_by_one_identity(self, rng):
        x = rng.normal(size=(2, 3, 5, 4))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = nc.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), 1, 0)
        np.testing.assert_allclose(out.data, x)

    def test_hand_values(self):
        out = nc.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 1)
        assert out.shape == (1, 3, 3)
        assert out.data[0, 1, 1] == 9 and out.data[0, 0, 0] == 4

    def test_channel_mismatch_diagnostic(self):
        with pytest.raises(ValueError, match="channel"):
            nc.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 3, 7), (1, 0, 1), (2, 1, 3), (1, 2, 5), (3, 0, 3)])
    def test_naive_oracle(self, rng, stride, pad, k):
        x = rng.normal(size=(2, 3, 9, 8))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        out = nc.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
        ref = naive_conv(x, w, b, stride, pad)
        np.testing.assert_allclose(out.data, ref, rtol=1e-6, atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            nc.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    def test_nhwc_layout_matches(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        a = nc.conv2d(Tensor(x), Tensor(w), None, 2, 1)
        b = nc.conv2d(Tensor(x.transpose(0, 2, 3, 1)), Tensor(w), None, 2, 1, layout="nhwc")
        np.testing.assert_allclose(b.data.transpose(0, 3, 1, 2), a.data, rtol=1e-12)

    def test_sum_gradient_unbatched_input(self, rng):
        x = t64(rng.normal(size=(2, 4, 5)))
        w = t64(rng.normal(size=(3, 2, 3, 3)))
        rep = grad_check(lambda x, w: nc.conv2d(x, w, None, 1, 1).sum(), [x, w])
        assert rep.passed, str(rep)

    @pytest.mark.parametrize("stride,pad,k,layout", [(1, 1, 3, "nchw"), (2, 1, 3, "nchw"), (2, 3, 7, "nhwc"),
                                                    (1, 0, 1, "nhwc"), (1, 1, 3, "nhwc")])
    def test_grad_check(self, rng, stride, pad, k, layout):
        shape = (2, 3, 6, 6) if layout == "nchw" else (2, 6, 6, 3)
        x = t64(rng.normal(size=shape))
        w = t64(rng.normal(size=(2, 3, k, k)))
        b = t64(rng.normal(size=2))
        rep = grad_check(lambda x, w, b: weighted_sum(nc.conv2d(x, w, b, stride, pad, layout)), [x, w, b],
                         tol=1e-6, max_checks=60)
        assert rep.passed, str(rep)


class TestPooling:
    def test_single_window(self):
        out = nc.maxpool2(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
        assert out.data.item() == 4

    def test_constant_input_first_element_wins(self):
        x = t64(np.ones((1, 4, 4)))
        out = nc.maxpool2(x)
        np.testing.assert_array_equal(out.data, np.ones((1, 2, 2)))
        out.sum().backward()
        expect = np.zeros((4, 4))
        expect[::2, ::2] = 1
        np.testing.assert_array_equal(x.grad[0], expect)

    def test_window_scan_oracle(self, rng):
        x = rng.normal(size=(3, 4, 4))
        out = nc.maxpool2(Tensor(x)).data
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    assert out[c, i, j] == x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            nc.maxpool2(Tensor(np.ones((1, 3, 4))))

    def test_nhwc(self, rng):
        x = rng.normal(size=(2, 3, 4, 6))
        a = nc.maxpool2(Tensor(x)).data
        b = nc.maxpool2(Tensor(x.transpose(0, 2, 3, 1)), layout="nhwc").data
        np.testing.assert_array_equal(b.transpose(0, 3, 1, 2), a)

    def test_grad_check_skips_nothing_on_distinct_values(self, rng):
        x = t64(rng.normal(size=(2, 2, 4, 4)))
        rep = grad_check(lambda x: weighted_sum(nc.maxpool2(x)), [x])
        assert rep.passed

    def test_upsample_values_and_grad(self):
        x = t64([[[1.0]]])
        out = nc.upsample_nearest2(x)
        np.testing.assert_array_equal(out.data, np.ones((1, 2, 2)))
        out.sum().backward()
        assert x.grad.item() == 4

    def test_maxpool_inverts_upsample(self, rng):
        x = rng.normal(size=(2, 3, 3))
        np.testing.assert_array_equal(nc.maxpool2(nc.upsample_nearest2(Tensor(x))).data, x)

    def test_upsample_nhwc_grad(self, rng):
        x = t64(rng.normal(size=(1, 2, 3, 2)))
        rep = grad_check(lambda x: weighted_sum(nc.upsample_nearest2(x, layout="nhwc")), [x])
        assert rep.passed


class TestBatchNorm:
    def _bn(self, x, gamma, beta, training=True, layout="nchw"):
        c = gamma.shape[0]
        return nc.batchnorm2d(x, gamma, beta, np.zeros(c), np.ones(c), training, 0.1, 1e-5, layout)

    def test_normalizes(self, rng):
        x = Tensor(rng.normal(3.0, 2.0, size=(4, 3, 5, 5)))
        out = self._bn(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)

    def test_gamma_zero_gives_beta(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 2, 2)))
        out = self._bn(x, Tensor(np.zeros(3)), Tensor(np.array([1.0, 2.0, 3.0]))).data
        np.testing.assert_allclose(out, np.broadcast_to(np.array([1.0, 2.0, 3.0])[None, :, None, None], out.shape))

    def test_too_few_values_in_train_mode(self):
        with pytest.raises(ValueError):
            self._bn(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)))

    def test_running_stats_update_and_eval(self, rng):
        x = rng.normal(2.0, 1.0, size=(8, 2, 4, 4))
        mod = nc.BatchNorm2d(2, dtype=np.float64)
        mod(Tensor(x))
        np.testing.assert_allclose(mod.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        mod.eval()
        out = mod(Tensor(x)).data
        rm, rv = mod.running_mean[None, :, None, None], mod.running_var[None, :, None, None]
        np.testing.assert_allclose(out, (x - rm) / np.sqrt(rv + 1e-5))

    @pytest.mark.parametrize("layout", ["nchw", "nhwc"])
    @pytest.mark.parametrize("training", [True, False])
    def test_grad_check(self, rng, layout, training):
        x = t64(rng.normal(size=(2, 2, 2, 2)))
        g = t64(rng.uniform(0.5, 1.5, size=2))
        b = t64(rng.normal(size=2))
        rep = grad_check(lambda x, g, b: weighted_sum(self._bn(x, g, b, training, layout)), [x, g, b])
        assert rep.passed, str(rep)


class TestSampling:
    def test_grid_node_exact(self, rng):
        f = rng.normal(size=(2, 3, 4))
        out = nc.bilinear_sample(Tensor(f), [(2.0, 1.0)]).data
        np.testing.assert_array_equal(out[:, 0], f[:, 1, 2])

    def test_hand_value(self):
        out = nc.bilinear_sample(Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]])), [(0.5, 0.5)])
        assert out.data.item() == pytest.approx(1.5)

    def test_constant_map(self, rng):
        pts = rng.uniform(-2, 6, size=(10, 2))
        out = nc.bilinear_sample(Tensor(np.full((1, 4, 4), 7.0)), pts)
        np.testing.assert_allclose(out.data, 7.0)

    def test_grad_check_both_layouts(self, rng):
        f = t64(rng.normal(size=(2, 3, 5, 5)))
        pts = rng.uniform(-0.5, 4.5, size=(4, 6, 2))
        bi = np.array([0, 1, 1, 0])
        rep = grad_check(lambda f: weighted_sum(nc.sample_bilinear(f, bi, pts)), [f])
        assert rep.passed
        fh = t64(f.data.transpose(0, 2, 3, 1))
        rep = grad_check(lambda f: weighted_sum(nc.sample_bilinear(f, bi, pts, layout="nhwc")), [fh])
        assert rep.passed
        a = nc.sample_bilinear(f, bi, pts).data
        b = nc.sample_bilinear(fh, bi, pts, layout="nhwc").data
        np.testing.assert_allclose(b.transpose(0, 2, 1), a)


class TestLosses:
    def test_mse_zero(self, rng):
        x = rng.normal(size=(3, 4))
        assert nc.mse(Tensor(x), x).item() == 0

    def test_xent_uniform_logits(self):
        t = np.zeros((21, 21))
        t[3, 4] = 1
        assert nc.softmax_xent_2d(Tensor(np.zeros((21, 21))), t).item() == pytest.approx(math.log(441), rel=1e-6)

    def test_xent_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            nc.softmax_xent_2d(Tensor(np.zeros((21, 21))), np.zeros((21, 21)))

    def test_grad_checks(self, rng):
        p = t64(rng.normal(size=(3, 4)))
        rep = grad_check(lambda p: nc.mse(p, np.ones((3, 4))), [p])
        assert rep.passed
        z = t64(rng.normal(size=(2, 5, 5)))
        mask = (rng.uniform(size=(2, 5, 5)) > 0.5).astype(float)
        mask[:, 0, 0] = 1
        rep = grad_check(lambda z: nc.softmax_xent_2d(z, mask), [z])
        assert rep.passed


class TestOptim:
    def _param(self, value):
        return Parameter(np.array(value, dtype=np.float64))

    def test_zero_grad_unchanged(self):
        p = self._param([1.0, -2.0])
        nc.adam_step([p], 0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert p.step_count == 1

    def test_first_step_hand_value(self):
        p = self._param([0.0])
        p.grad[:] = 1.0
        nc.adam_step([p], 0.1)
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_second_identical_step_smaller_than_lr(self):
        p = self._param([0.0])
        p.grad[:] = 1.0
        nc.adam_step([p], 0.1)
        before = p.data[0]
        p.grad[:] = 1.0
        nc.adam_step([p], 0.1)
        assert 0 < before - p.data[0] <= 0.1

    def test_weight_decay_added_to_gradient(self):
        p = self._param([2.0])
        nc.adam_step([p], 0.1, weight_decay=0.5)
        assert p.data[0] == pytest.approx(1.9, rel=1e-6)

    def test_lr_zero_leaves_params(self, rng):
        p = self._param(rng.normal(size=3))
        before = p.data.copy()
        p.grad[:] = rng.normal(size=3)
        nc.adam_step([p], 0.0)
        np.testing.assert_array_equal(p.data, before)

    def test_non_finite_aborts_before_update(self):
        a, b = self._param([1.0]), self._param([1.0])
        a.grad[:] = 1.0
        b.grad[:] = np.nan
        b.name = "bad"
        with pytest.raises(nc.NonFiniteGradient, match="bad"):
            nc.adam_step([a, b], 0.1)
        assert a.data[0] == 1.0 and a.step_count == 0

    def test_cosine_schedule(self):
        assert nc.cosine_lr(0, 100, 2e-3) == pytest.approx(2e-3)
        assert nc.cosine_lr(100, 100, 2e-3) == pytest.approx(0.0, abs=1e-15)
        assert nc.cosine_lr(50, 100, 2e-3) == pytest.approx(1e-3)
        with pytest.raises(ValueError):
            nc.cosine_lr(101, 100, 1.0)


class TestRngAndGradCheck:
    def test_same_seed_same_stream(self):
        a, b = nc.Rng(5), nc.Rng(5)
        np.testing.assert_array_equal(a.uniform(size=10), b.uniform(size=10))

    def test_state_roundtrip(self):
        r = nc.Rng(3)
        r.uniform(size=4)
        s = r.state
        x = r.integers(0, 100, size=5)
        r.state = s
        np.testing.assert_array_equal(r.integers(0, 100, size=5), x)

    def test_relu_kink_excluded(self):
        x = t64([0.0, 1.0, -1.0])
        rep = grad_check(lambda x: nc.relu(x).sum(), [x])
        assert rep.excluded[0] == 1 and rep.passed

    def test_vanishing_gradient_passes(self, rng):
        # a per-channel shift is removed by batch normalization: d/d(shift) = 0 exactly
        x, shift = t64(rng.normal(size=(4, 2, 3, 3))), t64(rng.normal(size=(1, 2, 1, 1)))
        g, b = t64(np.ones(2)), t64(np.zeros(2))
        f = lambda x, s: weighted_sum(nc.batchnorm2d(x + s, g, b, np.zeros(2), np.ones(2), True))  # noqa: E731
        rep = grad_check(f, [x, shift])
        assert rep.passed and np.abs(shift.grad).max() < 1e-12

    def test_requires_float64(self):
        with pytest.raises(TypeError):
            grad_check(lambda x: x.sum(), [Tensor(np.ones(2, np.float32), requires_grad=True)])

    def test_determinism_bitwise(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))

        def run():
            xt, wt = t64(x), t64(w)
            out = nc.relu(nc.conv2d(xt, wt, None, 1, 1))
            weighted_sum(out).backward()
            return out.data, xt.grad, wt.grad

        for a, b in zip(run(), run()):
            assert np.array_equal(a, b)
