"""Tensor/tape engine: forward values, gradients, tape discipline."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transition_nas import autodiff as ad
from transition_nas.autodiff import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    finite_diff_check,
    set_checked,
)


class TestForwardValues:
    def test_softmax_uniform_logits(self):
        z = ad.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(z.values, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_relu_definition(self):
        out = ad.relu(Tensor([-1.0, 2.5]))
        assert out.values.tolist() == [0.0, 2.5]

    def test_depthwise_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.random((2, 3, 5, 5)))
        w = np.zeros((3, 3, 3))
        w[:, 1, 1] = 1.0
        out = ad.dwconv2d(x, Tensor(w), stride=1, dilation=1, padding=1)
        np.testing.assert_array_equal(out.values, x.values)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_nll_label_out_of_range(self):
        lp = Tensor(np.log(np.full((2, 3), 1 / 3)))
        with pytest.raises(ValueError, match="label out of range"):
            ad.nll(lp, [0, 3])

    def test_max_pool_prefers_first_of_tied_maxima(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0] = [[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        t = Tensor(x, requires_grad=True)
        mask = np.zeros((1, 1, 2, 2))
        mask[0, 0, 0, 0] = 1.0  # read out only the top-left pooling window
        with Tape() as tape:
            out = ad.max_pool3x3(t, stride=2)
            root = ad.reduce_sum(ad.mul(out, Tensor(mask)))
        grads = tape.backward(root)
        # window holds two tied maxima; the row-major scan hits (0, 0) first
        assert grads[t][0, 0, 0, 0] == 1.0
        assert grads[t][0, 0, 0, 1] == 0.0


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            root = ad.reduce_sum(x)
        grads = tape.backward(root)
        np.testing.assert_array_equal(grads[x], [1.0, 1.0, 1.0])

    def test_scalar_product_rule(self):
        x = Tensor(3.0, requires_grad=True)
        y = Tensor(-2.0, requires_grad=True)
        with Tape() as tape:
            root = ad.mul(x, y)
        grads = tape.backward(root)
        assert grads[x] == pytest.approx(-2.0)
        assert grads[y] == pytest.approx(3.0)

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        w1 = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        b1 = Tensor(rng.standard_normal(5), requires_grad=True)
        w2 = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
        b2 = Tensor(rng.standard_normal(2), requires_grad=True)
        x = rng.standard_normal((3, 4))
        r = rng.standard_normal((3, 2))

        def f():
            h = ad.relu(ad.affine(Tensor(x), w1, b1))
            out = ad.affine(h, w2, b2)
            return ad.reduce_sum(ad.mul(out, Tensor(r)))

        assert finite_diff_check(f, [w1, b1, w2, b2]) <= 1e-5

    def test_backward_twice_without_reset_errors(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            root = ad.reduce_sum(x)
        tape.backward(root)
        with pytest.raises(TapeError, match="already ran"):
            tape.backward(root)

    def test_reset_rearms_the_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tape = Tape()
        with tape:
            root = ad.reduce_sum(x)
        tape.backward(root)
        tape.reset()
        with tape:
            root2 = ad.reduce_sum(ad.mul(x, x))
        grads = tape.backward(root2)
        np.testing.assert_allclose(grads[x], [2.0, 4.0])

    def test_non_scalar_root_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = ad.mul(x, x)
        with pytest.raises(TapeError, match="scalar"):
            tape.backward(out)

    def test_off_tape_root_rejected(self):
        x = Tensor(1.0, requires_grad=True)
        with pytest.raises(TapeError):
            backward(x)

    def test_gradients_deterministic_across_runs(self):
        rng = np.random.default_rng(5)
        vals = rng.standard_normal((3, 3))

        def run():
            w = Tensor(vals, requires_grad=True)
            with Tape() as tape:
                root = ad.reduce_sum(ad.mul(ad.softmax(w), w))
            return tape.backward(root)[w]

        g1, g2 = run(), run()
        np.testing.assert_array_equal(g1, g2)

    def test_unused_leaf_keeps_none_grad(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            root = ad.reduce_sum(x)
        tape.backward(root)
        assert y.grad is None


class TestFiniteDiffCheck:
    def test_quadratic_probe(self):
        p = Tensor([2.0], requires_grad=True)

        def f():
            return ad.reduce_sum(ad.mul(p, p))

        err = finite_diff_check(f, [p])
        assert err <= 1e-9
        # analytic derivative of sum of squares at 2.0 is 4.0
        with Tape() as tape:
            root = f()
        assert tape.backward(root)[p][0] == pytest.approx(4.0)

    def test_sampled_softmax_path(self):
        from transition_nas.relaxation import concrete_sample, gumbel_noise

        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal(4), requires_grad=True)
        g = gumbel_noise(rng, 4)
        r = rng.standard_normal(4)

        def f():
            return ad.reduce_sum(ad.mul(concrete_sample(a, g, 1.0), Tensor(r)))

        assert finite_diff_check(f, [a]) <= 1e-6

    def test_derived_inner_weight_path(self):
        from transition_nas.topology import build_topology
        from transition_nas.transition import derive_inner_weights, init_cell_arch_params

        topo = build_topology()
        rng = np.random.default_rng(4)
        params = init_cell_arch_params(topo, 3, rng, init_scale=0.7)
        outer = {e: Tensor(np.full(3, 1 / 3)) for e in topo.outer}
        readout = {e: rng.standard_normal(3) for e in topo.inner}

        def f():
            derived = derive_inner_weights(outer, params, topo)
            total = None
            for e in sorted(derived, key=lambda e: (e.dst, e.src)):
                term = ad.reduce_sum(ad.mul(derived[e], Tensor(readout[e])))
                total = term if total is None else ad.add(total, term)
            return total

        tensors = list(params.transition.values()) + list(params.attention.values())
        assert finite_diff_check(f, tensors) <= 1e-6

    def test_nondeterministic_f_detected(self):
        rng = np.random.default_rng(0)
        p = Tensor([1.0], requires_grad=True)

        def f():
            return ad.reduce_sum(ad.scale(p, rng.random()))

        with pytest.raises(RuntimeError, match="not deterministic"):
            finite_diff_check(f, [p])


class TestSoftmaxProperties:
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_output_on_simplex(self, logits):
        z = ad.softmax(Tensor(logits)).values
        assert np.all(z >= 0.0) and np.all(z <= 1.0)
        assert abs(z.sum() - 1.0) <= 1e-12

    @given(
        st.lists(st.floats(-20, 20), min_size=2, max_size=8),
        st.floats(-50, 50),
    )
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, logits, c):
        base = ad.softmax(Tensor(logits)).values
        shifted = ad.softmax(Tensor(np.asarray(logits) + c)).values
        np.testing.assert_allclose(shifted, base, atol=1e-12)


class TestCheckedMode:
    def test_nan_rejected_when_enabled(self):
        set_checked(True)
        try:
            with pytest.raises(NonFiniteError):
                Tensor([1.0, float("nan")])
            with np.errstate(divide="ignore"), pytest.raises(NonFiniteError):
                ad.log(Tensor([0.0]))  # -inf output
        finally:
            set_checked(False)

    def test_off_by_default(self):
        t = Tensor([float("inf")])
        assert math.isinf(t.values[0])


class TestApplyPrimitive:
    def test_dispatch_matches_direct_call(self):
        x = Tensor([[1.0, -2.0]])
        out = ad.apply_primitive("relu", [x])
        np.testing.assert_array_equal(out.values, [[1.0, 0.0]])

    def test_dispatch_with_attrs(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        out = ad.apply_primitive("avg_pool3x3", [x], {"stride": 2})
        assert out.shape == (1, 1, 2, 2)

    def test_list_primitives(self):
        a, b = Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros((1, 2, 2, 2)))
        out = ad.apply_primitive("concat_channels", [a, b])
        assert out.shape == (1, 3, 2, 2)
        w = Tensor([0.25, 0.75])
        mixed = ad.apply_primitive("weighted_sum", [w, Tensor([0.0, 4.0]), Tensor([8.0, 0.0])])
        np.testing.assert_allclose(mixed.values, [6.0, 1.0])

    def test_unknown_primitive(self):
        with pytest.raises(ValueError, match="unknown primitive"):
            ad.apply_primitive("fft", [Tensor([1.0])])
