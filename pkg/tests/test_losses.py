import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import boundseg.tensor as T
from boundseg.config import ConfigError, LossWeights
from boundseg.losses import (
    class_presence,
    cls_loss,
    cls_targets,
    mask_loss,
    mask_targets,
    total_loss,
)
from boundseg.tensor import ShapeError, Tensor
from boundseg.verify import tiny_problem


def scalar(x):
    return Tensor(float(x))


class TestClsLoss:
    def test_uniform(self):
        probs = Tensor(np.full((4, 4), 0.25))
        assert abs(cls_loss(probs, [True] * 4).item() - math.log(4)) <= 1e-12

    def test_perfect(self):
        assert cls_loss(Tensor(np.eye(3)), [True, True, True]).item() <= 1e-15

    def test_absent_class_targets_background(self):
        assert cls_targets([True, False, True, False]).tolist() == [0, 0, 2, 0]
        probs = np.eye(4)
        probs[1] = [1, 0, 0, 0]
        probs[3] = [1, 0, 0, 0]
        assert cls_loss(Tensor(probs), [True, False, True, False]).item() <= 1e-15

    def test_zero_probability_is_clamped(self):
        loss = cls_loss(Tensor(np.array([[0.0, 1.0]])), [True])
        assert loss.item() == pytest.approx(-math.log(1e-12))

    @given(st.floats(0.05, 0.9), st.floats(0.01, 0.04))
    @settings(max_examples=30, deadline=None)
    def test_monotone(self, p, dp):
        def at(q):
            return cls_loss(Tensor(np.array([[q, 1 - q]])), [True]).item()

        assert at(p - dp) > at(p)

    def test_presence(self):
        assert class_presence(np.array([[0, 2], [2, 2]]), 4).tolist() == [True, False, True, False]

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            cls_loss(Tensor(np.full((3, 3), 1 / 3)), [True, True])

    def test_grad_check(self, rng):
        probs = Tensor(rng.uniform(0.1, 0.9, size=(3, 3)), requires_grad=True)
        assert T.grad_check(lambda p: cls_loss(p, [True, False, True]), [probs]) < 1e-6


class TestMaskLoss:
    def test_perfect(self):
        gt = np.array([[0, 1], [1, 2]])
        assert mask_loss(Tensor(mask_targets(gt, 3)), gt).item() <= 1e-12

    def test_half_everywhere(self):
        gt = np.zeros((4, 4), dtype=int)
        n = gt.size
        dice_fg = 1 - (2 * 0.5 * n + 1) / (0.5 * n + n + 1)
        dice_bg = 1 - 1 / (0.5 * n + 1)
        want = math.log(2) + (dice_fg + dice_bg) / 2
        assert abs(mask_loss(Tensor(np.full((2, 4, 4), 0.5)), gt).item() - want) <= 1e-12

    def test_empty_class_empty_mask(self):
        gt = np.zeros((3, 3), dtype=int)
        masks = np.stack([np.ones((3, 3)), np.zeros((3, 3))])
        assert mask_loss(Tensor(masks), gt).item() == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            mask_loss(Tensor(np.full((2, 4, 4), 0.5)), np.zeros((4, 5), int))

    def test_grad_check(self, rng):
        masks = Tensor(rng.uniform(0.05, 0.95, size=(3, 4, 4)), requires_grad=True)
        gt = rng.integers(0, 3, size=(4, 4))
        assert T.grad_check(lambda m: mask_loss(m, gt), [masks]) < 1e-6


class TestTotalLoss:
    def test_weighted_sum(self):
        total, b = total_loss(scalar(0.2), scalar(0.3), scalar(7.0), LossWeights(1, 1, 0))
        assert total.item() == pytest.approx(0.5, abs=1e-15)
        assert (b.cls, b.mask, b.edge, b.total) == (0.2, 0.3, 7.0, total.item())

    def test_zero(self):
        assert total_loss(scalar(0), scalar(0), scalar(0), LossWeights())[0].item() == 0.0

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 2))
    @settings(max_examples=50, deadline=None)
    def test_linear_in_lambda3(self, c, m, e, lam):
        def tot(l3):
            return total_loss(scalar(c), scalar(m), scalar(e), LossWeights(1, 1, l3))[0].item()

        assert abs((tot(2 * lam) - tot(0)) - 2 * (tot(lam) - tot(0))) <= 1e-12 * max(1, c + m + e * lam)

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
    @settings(max_examples=50, deadline=None)
    def test_breakdown_matches(self, c, m, e, l1, l2, l3):
        _, b = total_loss(scalar(c), scalar(m), scalar(e), LossWeights(l1, l2, l3))
        assert abs(b.total - (l1 * c + l2 * m + l3 * e)) <= 1e-12 * max(1.0, b.total)
        assert b.total >= 0

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError, match="lambda2"):
            LossWeights(1.0, -0.5, 0.1)


class TestModelGradients:
    def test_lambda3_zero_isolates_boundary_head(self):
        model, image, labels = tiny_problem(0)
        loss, _ = model.loss(image, labels, LossWeights(1, 1, 0))
        T.backward(loss)
        heads = [n for n in model.params if n.startswith("befbm.boundary.")]
        assert heads
        for n in heads:
            assert model.params[n].grad is not None and not model.params[n].grad.any(), n
        assert any(model.params[n].grad.any() for n in model.params if n.startswith("backbone."))

    def test_lambda3_positive_reaches_boundary_head(self):
        model, image, labels = tiny_problem(1)
        T.backward(model.loss(image, labels, LossWeights())[0])
        assert model.params["befbm.boundary.l1.weight"].grad.any()

    def test_all_zero_weights_give_zero_gradient(self):
        model, image, labels = tiny_problem(2)
        T.backward(model.loss(image, labels, LossWeights(0, 0, 0))[0])
        for n, p in model.params.items():
            assert p.grad is None or not p.grad.any(), n
