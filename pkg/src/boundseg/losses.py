"""Composite objective lambda1 * L_cls + lambda2 * L_mask + lambda3 * L_edge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import LossWeights
from .tensor import ShapeError, Tensor

PROB_CLAMP = 1e-12
DICE_EPS = 1.0


@dataclass
class LossBreakdown:
    cls: float
    mask: float
    edge: float
    total: float


def _row_sums(x: Tensor) -> Tensor:
    """[K, N] -> [K, 1]."""
    return x @ T.Tensor(np.ones((x.shape[1], 1)))


def _safe_log(x: Tensor) -> Tensor:
    return T.log(T.clip(x, PROB_CLAMP, 1.0))


def cls_targets(present: np.ndarray) -> np.ndarray:
    """Query k targets class k when class k is in the ground truth, else background."""
    present = np.asarray(present, dtype=bool)
    return np.where(present, np.arange(present.size), 0)


def cls_loss(class_probs: Tensor, present: np.ndarray) -> Tensor:
    """Mean over queries of -log p_k(target_k)."""
    k, c = class_probs.shape
    if len(present) != k:
        raise ShapeError(f"{k} queries vs {len(present)} presence flags")
    onehot = np.zeros((k, c))
    onehot[np.arange(k), cls_targets(present)] = 1.0
    picked = _row_sums(class_probs * T.Tensor(onehot))
    return -T.mean(_safe_log(picked))


def class_presence(gt: np.ndarray, num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(gt).reshape(-1), minlength=num_classes)[:num_classes] > 0


def mask_targets(gt: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(gt)[None] == np.arange(k)[:, None, None]).astype(np.float64)


def mask_loss(masks: Tensor, gt: np.ndarray) -> Tensor:
    """Mean over queries of per-pixel BCE plus soft Dice loss (eps = 1)."""
    k = masks.shape[0]
    if masks.shape[1:] != np.shape(gt):
        raise ShapeError(f"mask_loss: masks {masks.shape} vs labels {np.shape(gt)}")
    g = mask_targets(gt, k)
    gt_t = T.Tensor(g)
    bce = -T.mean(gt_t * _safe_log(masks) + T.Tensor(1.0 - g) * _safe_log(1.0 - masks))
    flat = T.reshape(masks, (k, -1))
    inter = _row_sums(flat * T.Tensor(g.reshape(k, -1)))
    m_sum = _row_sums(flat)
    g_sum = T.Tensor(g.reshape(k, -1).sum(axis=1, keepdims=True))
    dice = 1.0 - (2.0 * inter + DICE_EPS) / (m_sum + g_sum + DICE_EPS)
    return bce + T.mean(dice)


def total_loss(cls: Tensor, mask: Tensor, edge: Tensor, weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    total = weights.lambda1 * cls + weights.lambda2 * mask + weights.lambda3 * edge
    breakdown = LossBreakdown(cls.item(), mask.item(), edge.item(), total.item())
    return total, breakdown
