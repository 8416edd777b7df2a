"""Optimization loop, loss logging, checkpointing and the lambda3 ablation."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import LossWeights, RunConfig, TrainConfig
from .data import load_dataset
from .imaging import Sample, augment_crop_scale
from .losses import LossBreakdown
from .metrics import MetricsReport, evaluate_predictions
from .model import SegModel
from .rng import SplitMix64

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step", "total", "cls", "mask", "edge"]
# Training crops are full-frame, so only upscaling leaves room for a window.
TRAIN_SCALE_RANGE = (1.0, 1.25)
_SHUFFLE_KEY, _AUGMENT_KEY = 1, 2


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict[str, T.Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.isfinite(p.data).all():
                raise TrainingError(f"parameter {name} became non-finite at optimizer step {self.t}")


def collect_grads(params: dict[str, T.Tensor]) -> dict[str, np.ndarray]:
    return {k: np.zeros(p.shape) if p.grad is None else p.grad for k, p in params.items()}


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


@dataclass
class TrainState:
    model: SegModel
    optimizer: Adam
    epoch: int = 0
    step: int = 0
    boundary_grad_max: float = 0.0


def new_state(run: RunConfig) -> TrainState:
    model = SegModel(run.model, seed=run.train.seed)
    return TrainState(model, Adam(model.params, lr=run.train.lr))


def train_step(
    state: TrainState,
    batch: Sequence[Sample],
    weights: LossWeights,
    grad_clip: float = 10.0,
    augment_rngs: Sequence[SplitMix64] | None = None,
) -> LossBreakdown:
    """Forward, composite loss, backward and one Adam update on the batch mean."""
    if not batch:
        raise TrainingError("empty batch")
    model = state.model
    model.zero_grad()
    size = model.config.image_size
    losses, parts = [], []
    for i, sample in enumerate(batch):
        if augment_rngs is not None:
            sample = augment_crop_scale(sample, augment_rngs[i], size, TRAIN_SCALE_RANGE)
        loss, br = model.loss(sample.image, sample.labels, weights)
        losses.append(loss)
        parts.append(br)
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    total = total * (1.0 / len(batch))
    n = len(parts)
    mean = LossBreakdown(
        sum(p.cls for p in parts) / n,
        sum(p.mask for p in parts) / n,
        sum(p.edge for p in parts) / n,
        total.item(),
    )
    if not np.isfinite(mean.total):
        raise TrainingError(f"non-finite loss at epoch {state.epoch}, step {state.step + 1}: {mean}")
    T.backward(total)
    grads = collect_grads(model.params)
    for name, g in grads.items():
        if name.startswith("befbm.boundary."):
            state.boundary_grad_max = max(state.boundary_grad_max, float(np.abs(g).max()))
    clip_global_norm(grads, grad_clip)
    state.optimizer.step(grads)
    state.step += 1
    return mean


def predict_all(model: SegModel, samples: Sequence[Sample]) -> list[np.ndarray]:
    return [model.predict(s.image) for s in samples]


def evaluate_model(model: SegModel, samples: Sequence[Sample]) -> MetricsReport:
    return evaluate_predictions(predict_all(model, samples), [s.labels for s in samples], model.config.num_classes)


@dataclass
class TrainResult:
    model: SegModel
    out_dir: str
    loss_csv: str
    final_checkpoint: str
    best_checkpoint: str
    best_epoch: int
    best_val_miou: float
    val_history: list[dict] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    boundary_grad_max: float = 0.0


def _lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_decay_every <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_decay_factor ** ((epoch - 1) // cfg.lr_decay_every)


def _fmt(x: float) -> str:
    return repr(float(x))


def run_training(run: RunConfig, splits: dict[str, list[Sample]] | None = None) -> TrainResult:
    """Train for ``run.train.epochs`` epochs, logging one CSV row per step.

    Writes ``loss.csv``, ``val.csv``, ``best.ckpt``, ``final.ckpt``,
    ``config.json`` and ``summary.json`` into ``run.train.out_dir``.
    """
    cfg = run.train
    if splits is None:
        splits = load_dataset(cfg.data_dir, run.model.num_classes)
    train_set, val_set = splits["train"], splits["val"]
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(run.to_dict(), fh, indent=2)

    state = new_state(run)
    root = SplitMix64(cfg.seed)
    loss_csv = os.path.join(cfg.out_dir, "loss.csv")
    best_ckpt = os.path.join(cfg.out_dir, "best.ckpt")
    final_ckpt = os.path.join(cfg.out_dir, "final.ckpt")
    best_epoch, best_miou = 0, -1.0
    history, epoch_means = [], []

    with open(loss_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for epoch in range(1, cfg.epochs + 1):
            state.epoch = epoch
            state.optimizer.lr = _lr_for_epoch(cfg, epoch)
            order = root.child(_SHUFFLE_KEY, epoch).permutation(len(train_set))
            totals = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                rngs = [root.child(_AUGMENT_KEY, epoch, i) for i in idx] if cfg.augment else None
                br = train_step(state, [train_set[i] for i in idx], run.loss, cfg.grad_clip, rngs)
                writer.writerow([epoch, state.step, _fmt(br.total), _fmt(br.cls), _fmt(br.mask), _fmt(br.edge)])
                totals.append(br.total)
            fh.flush()
            epoch_means.append(float(np.mean(totals)))
            rep = evaluate_model(state.model, val_set)
            history.append({"epoch": epoch, "train_loss": epoch_means[-1], "miou": rep.miou,
                            "mdice": rep.mdice, "mrecall": rep.mrecall, "boundary_f1": rep.boundary_f1})
            log.info("epoch %d loss %.4f val mIoU %.4f bF1 %.4f", epoch, epoch_means[-1], rep.miou, rep.boundary_f1)
            if rep.miou > best_miou:
                best_epoch, best_miou = epoch, rep.miou
                state.model.save(best_ckpt)
    state.model.save(final_ckpt)

    with open(os.path.join(cfg.out_dir, "val.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "miou", "mdice", "mrecall", "boundary_f1"])
        for h in history:
            writer.writerow([h["epoch"]] + [_fmt(h[k]) for k in ("train_loss", "miou", "mdice", "mrecall", "boundary_f1")])
    summary = {
        "best_epoch": best_epoch,
        "best_val_miou": best_miou,
        "final_val_miou": history[-1]["miou"],
        "final_val_boundary_f1": history[-1]["boundary_f1"],
        "first_epoch_loss": epoch_means[0],
        "final_epoch_loss": epoch_means[-1],
        "boundary_grad_max": state.boundary_grad_max,
        "steps": state.step,
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return TrainResult(state.model, cfg.out_dir, loss_csv, final_ckpt, best_ckpt, best_epoch, best_miou,
                       history, epoch_means, state.boundary_grad_max)


def median3(values: Sequence[float]) -> float:
    return sorted(values)[len(values) // 2]


def run_ablation(
    run: RunConfig,
    lambda3_values: Sequence[float] = (0.0, 0.1),
    seeds: Sequence[int] | None = None,
    splits: dict[str, list[Sample]] | None = None,
) -> dict:
    """Train one arm per lambda3 value on the same seeds and compare on val.

    ``expectation_met`` records whether the largest-lambda3 arm's median
    boundary F1 is at least that of the lambda3 = 0 arm.
    """
    seeds = list(seeds) if seeds is not None else [run.train.seed + i for i in range(3)]
    if splits is None:
        splits = load_dataset(run.train.data_dir, run.model.num_classes)
    base_out = run.train.out_dir
    arms = []
    for lam in lambda3_values:
        runs = []
        for seed in seeds:
            arm = copy.deepcopy(run)
            arm.loss.lambda3 = float(lam)
            arm.train.seed = seed
            arm.train.out_dir = os.path.join(base_out, f"lambda3_{lam:g}", f"seed{seed}")
            res = run_training(arm, splits)
            final = res.val_history[-1]
            runs.append({"seed": seed, "miou": final["miou"], "boundary_f1": final["boundary_f1"],
                         "boundary_grad_max": res.boundary_grad_max})
        arms.append({
            "lambda3": float(lam),
            "miou": median3([r["miou"] for r in runs]),
            "boundary_f1": median3([r["boundary_f1"] for r in runs]),
            "seeds": seeds,
            "runs": runs,
        })
    zero_arms = [a for a in arms if a["lambda3"] == 0.0]
    pos_arms = [a for a in arms if a["lambda3"] > 0.0]
    report = {
        "arms": arms,
        "seeds": seeds,
        "expectation_met": bool(zero_arms and pos_arms
                                and max(pos_arms, key=lambda a: a["lambda3"])["boundary_f1"] >= zero_arms[0]["boundary_f1"]),
        "zero_arm_boundary_grads_zero": all(r["boundary_grad_max"] == 0.0 for a in zero_arms for r in a["runs"]),
    }
    os.makedirs(base_out, exist_ok=True)
    with open(os.path.join(base_out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report
