import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import boundseg.tensor as T
from boundseg.tensor import ShapeError, Tensor
from boundseg.verify import op_cases
from oracles import central_diff, conv2d_loops

finite = st.floats(-50, 50, allow_nan=False)


class TestElementwise:
    def test_add_zero_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(T.add(x, T.zeros_like(x)).data, x.data)

    def test_mul_by_zero(self, rng):
        x = Tensor(rng.normal(size=(2, 5)))
        assert not (x * 0).data.any()

    def test_add_by_hand(self):
        out = Tensor([[1, 2], [3, 4]]) + Tensor([[10, 20], [30, 40]])
        np.testing.assert_array_equal(out.data, [[11, 22], [33, 44]])

    def test_elementwise_dispatch(self):
        a = Tensor([1.0, 2.0])
        np.testing.assert_array_equal(T.elementwise("sub", a, Tensor([1.0, 1.0])).data, [0, 1])
        np.testing.assert_array_equal(T.elementwise("scale", a, 3).data, [3, 6])

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_no_implicit_broadcast(self):
        with pytest.raises(ShapeError):
            T.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


class TestMatmul:
    def test_identity(self, rng):
        b = rng.normal(size=(2, 3))
        np.testing.assert_array_equal((Tensor(np.eye(2)) @ Tensor(b)).data, b)

    def test_by_hand(self):
        out = Tensor([[1, 2], [3, 4]]) @ Tensor([[5, 6], [7, 8]])
        np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])

    def test_zeros(self, rng):
        assert not (Tensor(rng.normal(size=(3, 4))) @ T.zeros((4, 2))).data.any()

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_backward_rule(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        dc = rng.normal(size=(3, 2))
        T.sum(T.matmul(a, b) * Tensor(dc)).backward()
        np.testing.assert_allclose(a.grad, dc @ b.data.T, atol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ dc, atol=1e-14)


class TestConv2d:
    def test_1x1_identity(self, rng):
        x = rng.normal(size=(1, 5, 5))
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_ones_kernel_on_constant(self):
        out = T.conv2d(Tensor(np.full((1, 4, 6), 0.25)), Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_allclose(out.data, 9 * 0.25, atol=0)

    def test_matches_loops_5x5(self, rng):
        x, k = rng.normal(size=(1, 5, 5)), rng.normal(size=(1, 1, 3, 3))
        np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k)).data, conv2d_loops(x, k), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loops_random(self, seed):
        r = np.random.default_rng(seed)
        cin, cout = r.integers(1, 4, 2)
        h, w = r.integers(1, 17, 2)
        kh, kw = r.choice([1, 3, 5], 2)
        stride = int(r.integers(1, 4))
        x, k = r.normal(size=(cin, h, w)), r.normal(size=(cout, cin, kh, kw))
        got = T.conv2d(Tensor(x), Tensor(k), stride).data
        np.testing.assert_allclose(got, conv2d_loops(x, k, stride), atol=1e-12)

    def test_output_size(self):
        out = T.conv2d(Tensor(np.ones((1, 7, 8))), Tensor(np.ones((2, 1, 3, 3))), stride=2)
        assert out.shape == (2, 4, 4)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    def test_stride_zero_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=0)

    def test_input_grad_matches_fd(self, rng):
        x0, k = rng.normal(size=(2, 5, 4)), rng.normal(size=(3, 2, 3, 3))
        w = rng.normal(size=(3, 3, 2))

        def f(xv):
            return float((conv2d_loops(xv, k, 2) * w).sum())

        x = Tensor(x0, requires_grad=True)
        T.sum(T.conv2d(x, Tensor(k), 2) * Tensor(w)).backward()
        np.testing.assert_allclose(x.grad, central_diff(f, x0), atol=1e-7)


class TestSigmoid:
    def test_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    @given(arrays(np.float64, 7, elements=finite))
    def test_symmetry_and_range(self, x):
        s = T.sigmoid(Tensor(x)).data
        np.testing.assert_allclose(s + T.sigmoid(Tensor(-x)).data, 1.0, atol=1e-15)
        assert ((s > 0) & (s < 1)).all()

    def test_derivative_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        T.sigmoid(x).backward()
        assert x.grad == 0.25
        h = 1e-5
        fd = (1 / (1 + math.exp(-h)) - 1 / (1 + math.exp(h))) / (2 * h)
        assert abs(float(x.grad) - fd) < 1e-8


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor(np.full(4, 2.5))).data, 0.25, atol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=finite))
    def test_rows_sum_to_one(self, x):
        s = T.softmax(Tensor(x)).data
        assert (s >= 0).all()
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    @given(arrays(np.float64, 6, elements=finite), st.floats(-100, 100))
    def test_shift_invariance(self, x, c):
        np.testing.assert_allclose(T.softmax(Tensor(x + c)).data, T.softmax(Tensor(x)).data, atol=1e-12)

    def test_large_inputs_stable(self):
        s = T.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        np.testing.assert_allclose(s, [0.5, 0.5, 0.0])


class TestGlobalAvgPool:
    def test_constant(self):
        np.testing.assert_array_equal(T.global_avg_pool(Tensor(np.full((3, 2, 5), 1.5))).data, [1.5] * 3)

    def test_by_hand(self):
        assert T.global_avg_pool(Tensor([[[1, 3], [5, 7]]])).data.tolist() == [4.0]

    def test_gradient(self, rng):
        x0 = rng.normal(size=(2, 3, 4))
        x = Tensor(x0, requires_grad=True)
        T.sum(T.global_avg_pool(x)).backward()
        np.testing.assert_allclose(x.grad, 1 / 12)
        fd = central_diff(lambda v: v.mean(axis=(1, 2)).sum(), x0, h=1e-5)
        assert np.abs(x.grad - fd).max() < 1e-8


class TestResample:
    def test_upsample(self):
        out = T.resample(Tensor([[[1, 2], [3, 4]]]), "upsample-nearest-2x").data[0]
        np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_maxpool(self):
        assert T.resample(Tensor([[[1, 2], [3, 4]]]), "maxpool-2x").data.tolist() == [[[4.0]]]

    def test_avgpool_constant(self):
        np.testing.assert_array_equal(T.resample(Tensor(np.full((2, 4, 6), 0.7)), "avgpool-2x").data, 0.7)

    @pytest.mark.parametrize("mode", ["maxpool-2x", "avgpool-2x"])
    def test_odd_dims_rejected(self, mode):
        with pytest.raises(ShapeError):
            T.resample(Tensor(np.ones((1, 3, 4))), mode)


class TestBackward:
    def test_sum_of_squares(self, rng):
        x0 = rng.normal(size=(4,))
        x = Tensor(x0, requires_grad=True)
        T.sum(x * x).backward()
        np.testing.assert_allclose(x.grad, central_diff(lambda v: (v * v).sum(), x0), atol=1e-8)

    def test_independent_input_gets_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0], requires_grad=True)
        T.grad_check  # noqa: B018 - import sanity
        loss = T.sum(y * y) + T.sum(T.scale(x, 0.0))
        loss.backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_ancestor_untouched(self):
        x = Tensor([1.0], requires_grad=True)
        z = Tensor([5.0], requires_grad=True)
        T.sum(x * x).backward()
        assert z.grad is None

    def test_sigmoid_of_linear(self, rng):
        w0, x0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 1))
        w, x = Tensor(w0, requires_grad=True), Tensor(x0, requires_grad=True)
        T.sum(T.sigmoid(w @ x)).backward()

        def loss(wv, xv):
            return float((1 / (1 + np.exp(-(wv @ xv)))).sum())

        fw = central_diff(lambda v: loss(v, x0), w0)
        fx = central_diff(lambda v: loss(w0, v), x0)
        assert np.abs(w.grad - fw).max() / max(1, np.abs(fw).max()) < 1e-4
        assert np.abs(x.grad - fx).max() / max(1, np.abs(fx).max()) < 1e-4

    def test_fanout_accumulates(self, rng):
        x0 = rng.normal(size=(5,))
        x = Tensor(x0, requires_grad=True)
        y = T.sigmoid(x)
        T.sum(y * x + T.scale(y, 2.0)).backward()
        fd = central_diff(lambda v: float((1 / (1 + np.exp(-v)) * (v + 2)).sum()), x0)
        np.testing.assert_allclose(x.grad, fd, atol=1e-8)

    def test_non_scalar_rejected(self):
        with pytest.raises(ShapeError):
            T.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * x
        assert y.node is None and not y.requires_grad


class TestGradCheck:
    def test_square_sum(self, rng):
        assert T.grad_check(lambda x: T.sum(x * x), Tensor(rng.normal(size=6))) < 1e-8

    def test_detects_corrupted_rule(self, rng):
        x = Tensor(rng.normal(size=6))
        with T.inject_fault("mul", 1.5):  # d(x*x) becomes 3x instead of 2x
            assert T.grad_check(lambda v: T.sum(v * v), x) > 0.1

    def test_constant_function(self, rng):
        c = Tensor(np.ones(1))
        assert T.grad_check(lambda x: T.sum(c), Tensor(rng.normal(size=4))) == 0.0

    def test_non_scalar_rejected(self):
        with pytest.raises(ShapeError):
            T.grad_check(lambda x: x * 2.0, Tensor(np.ones(3)))

    def test_leaves_inputs_unchanged(self, rng):
        x0 = rng.normal(size=5)
        x = Tensor(x0)
        T.grad_check(lambda v: T.sum(T.sigmoid(v)), x)
        np.testing.assert_array_equal(x.data, x0)
        assert x.grad is None and not x.requires_grad


@pytest.mark.parametrize("seed", range(5))
def test_every_op_passes_grad_check(seed):
    for name, (f, xs) in op_cases(np.random.default_rng(100 + seed)).items():
        err = T.grad_check(f, xs)
        assert err < 1e-4, name


def test_tensor_invariants():
    with pytest.raises(ShapeError):
        Tensor(np.ones((0, 3)))
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert int(np.prod(t.shape)) == t.data.size
