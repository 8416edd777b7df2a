"""Self-checks run by ``boundseg verify``: gradient checks and direct oracles."""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .befbm import bridge_pair, gate_alpha
from .config import LossWeights, ModelConfig
from .imaging import SOBEL_X, SOBEL_Y, sobel_edge
from .metrics import ConfusionAccumulator, report
from .model import SegModel

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-12

# Smallest configuration that still exercises every layer type.
TINY_MODEL = ModelConfig(image_size=(16, 16), num_classes=3, num_scales=2, channels=(4, 6),
                         stem_channels=(3, 4), queries=3, embed_dim=6, decoder_rounds=1)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _rand(rng, *shape, scale=1.0) -> T.Tensor:
    return T.Tensor(rng.normal(size=shape) * scale)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., T.Tensor], list[T.Tensor]]]:
    """Scalar-valued probes, one per differentiable op (weighted sums avoid symmetric cancellation)."""

    def probe(shape):
        return T.Tensor(rng.normal(size=shape))

    def wsum(y: T.Tensor, w: T.Tensor) -> T.Tensor:
        return T.sum(y * w)

    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    m1, m2 = _rand(rng, 3, 5), _rand(rng, 5, 2)
    img = _rand(rng, 2, 6, 6)
    k3 = _rand(rng, 3, 2, 3, 3)
    k1 = _rand(rng, 3, 2, 1, 1)
    pos = T.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
    s = T.Tensor(rng.normal())
    bias = _rand(rng, 2)
    # Keep clip inputs away from the kinks at +-0.5.
    mag = np.where(rng.random((3, 4)) < 0.5, rng.uniform(0.0, 0.4, (3, 4)), rng.uniform(0.6, 2.0, (3, 4)))
    away = T.Tensor(rng.choice([-1.0, 1.0], size=(3, 4)) * mag)
    w_rows = probe((3, 4))
    w_img = probe((2, 6, 6))
    return {
        "add": (lambda x, y: wsum(x + y, w_rows), [a, b]),
        "sub": (lambda x, y: wsum(x - y, w_rows), [a, b]),
        "mul": (lambda x, y: wsum(x * y, w_rows), [a, b]),
        "mul-fanout": (lambda x: T.sum(x * x * x), [a]),
        "div": (lambda x, y: wsum(x / y, w_rows), [a, pos]),
        "scale": (lambda x: wsum(3.5 * x, w_rows), [a]),
        "add_const": (lambda x: wsum(x + 2.0, w_rows) + T.sum(1.0 - x), [a]),
        "clip": (lambda x: wsum(T.clip(x, -0.5, 0.5), w_rows), [away]),
        "scale_by": (lambda x, c: wsum(T.scale_by(x, c), w_rows), [a, s]),
        "add_bias": (lambda x, c: wsum(T.add_bias(x, c, axis=0), w_img), [img, bias]),
        "sigmoid": (lambda x: wsum(T.sigmoid(x), w_rows), [a]),
        "log": (lambda x: wsum(T.log(x), w_rows), [pos]),
        "softmax": (lambda x: wsum(T.softmax(x), w_rows), [a]),
        "layer_norm": (lambda x: wsum(T.layer_norm(x), w_rows), [a]),
        "mean": (lambda x: T.mean(x * x), [a]),
        "matmul": (lambda x, y: T.sum(T.sigmoid(x @ y)), [m1, m2]),
        "transpose": (lambda x: wsum(T.transpose(T.transpose(x)), w_rows), [a]),
        "reshape": (lambda x: wsum(T.reshape(T.reshape(x, (12,)), (3, 4)), w_rows), [a]),
        "conv2d-3x3-s1": (lambda x, k: T.sum(T.sigmoid(T.conv2d(x, k))), [img, k3]),
        "conv2d-3x3-s2": (lambda x, k: T.sum(T.sigmoid(T.conv2d(x, k, stride=2))), [img, k3]),
        "conv2d-1x1": (lambda x, k: T.sum(T.sigmoid(T.conv2d(x, k))), [img, k1]),
        "global_avg_pool": (lambda x: T.sum(T.sigmoid(T.global_avg_pool(x))), [img]),
        "upsample-nearest-2x": (lambda x: T.sum(T.sigmoid(T.resample(x, "upsample-nearest-2x"))), [img]),
        "avgpool-2x": (lambda x: T.sum(T.sigmoid(T.resample(x, "avgpool-2x"))), [img]),
        "maxpool-2x": (lambda x: T.sum(T.sigmoid(T.resample(x, "maxpool-2x"))), [img]),
        "gate_alpha": (lambda zi, zj, w1, w2: gate_alpha(zi, zj, w1, w2),
                       [_rand(rng, 3, 4, 4), _rand(rng, 3, 4, 4), _rand(rng, 3), _rand(rng, 3)]),
        "bridge_pair": (lambda zi, zj, al: T.sum(T.sigmoid(bridge_pair(zi, zj, T.sigmoid(al)))),
                        [_rand(rng, 2, 4, 4), _rand(rng, 2, 2, 2), T.Tensor(rng.normal())]),
    }


def check_ops(seeds=range(5)) -> CheckResult:
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    for seed in seeds:
        for name, (f, xs) in op_cases(np.random.default_rng(seed)).items():
            err = T.grad_check(f, xs)
            if err > worst or math.isnan(err):
                worst, worst_name = err, name
    ok = worst < GRAD_TOL
    return CheckResult("grad_check per op", ok, f"max rel err {worst:.2e} ({worst_name})", time.perf_counter() - t0)


def tiny_problem(seed: int):
    rng = np.random.default_rng(seed)
    model = SegModel(TINY_MODEL, seed=seed)
    image = rng.uniform(size=(16, 16, 3))
    labels = rng.integers(0, 3, size=(16, 16))
    labels[:8, :8] = 1  # guarantee edges and a present class
    return model, image, labels


def check_composite_loss(seeds=range(5), weights: LossWeights | None = None) -> CheckResult:
    t0 = time.perf_counter()
    weights = weights or LossWeights()
    worst = 0.0
    for seed in seeds:
        model, image, labels = tiny_problem(seed)
        names = list(model.params)
        err = T.grad_check(lambda *ps: model.loss(image, labels, weights)[0], [model.params[n] for n in names])
        worst = max(worst, err) if not math.isnan(err) else float("nan")
    ok = worst < GRAD_TOL
    return CheckResult("grad_check composite loss", ok, f"max rel err {worst:.2e} over {len(list(seeds))} seeds",
                       time.perf_counter() - t0)


def conv_oracle(x: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for di in range(kh):
                        for dj in range(kw):
                            r = min(max(i * stride + di - kh // 2, 0), h - 1)
                            q = min(max(j * stride + dj - kw // 2, 0), w - 1)
                            acc += k[o, c, di, dj] * x[c, r, q]
                out[o, i, j] = acc
    return out


def check_conv_oracle(n: int = 20) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(123)
    worst = 0.0
    for trial in range(n):
        cin, cout = rng.integers(1, 4, size=2)
        h, w = rng.integers(1, 17, size=2)
        kh, kw = rng.choice([1, 3], size=2)
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(cin, h, w))
        k = rng.normal(size=(cout, cin, kh, kw))
        with T.no_grad():
            got = T.conv2d(T.Tensor(x), T.Tensor(k), stride).data
        worst = max(worst, float(np.abs(got - conv_oracle(x, k, stride)).max()))
    sobel = np.stack([SOBEL_X, SOBEL_Y])[:, None]
    x = rng.uniform(size=(1, 16, 16))
    with T.no_grad():
        got = T.conv2d(T.Tensor(x), T.Tensor(sobel)).data
    worst = max(worst, float(np.abs(got - conv_oracle(x, sobel, 1)).max()))
    return CheckResult("conv2d vs nested-loop oracle", worst <= ORACLE_TOL, f"max abs diff {worst:.2e}",
                       time.perf_counter() - t0)


def check_sobel() -> CheckResult:
    t0 = time.perf_counter()
    const = np.full((8, 8, 3), 0.37)
    zero_ok = bool((sobel_edge(const) == 0).all())
    step = np.zeros((8, 8, 3))
    step[:, 4:] = 1.0
    e = sobel_edge(step)
    target = 4.0 / (4.0 * math.sqrt(2.0))
    v_err = float(np.abs(e[1:-1, 3:5] - target).max())
    h_err = float(np.abs(sobel_edge(step.transpose(1, 0, 2)) - e.T).max())
    ok = zero_ok and v_err <= ORACLE_TOL and h_err <= ORACLE_TOL
    return CheckResult("sobel analytics", ok, f"constant->zero={zero_ok}, step err {v_err:.1e}, transpose err {h_err:.1e}",
                       time.perf_counter() - t0)


def brute_force_metrics(pred: np.ndarray, gt: np.ndarray, c: int) -> tuple[float, float, float]:
    ious, dices, recalls = [], [], []
    for k in range(c):
        tp = fp = fn = 0
        for p, g in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist()):
            tp += p == k and g == k
            fp += p == k and g != k
            fn += p != k and g == k
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
            dices.append(2 * tp / (2 * tp + fp + fn))
        if tp + fn:
            recalls.append(tp / (tp + fn))
    return sum(ious) / len(ious), sum(dices) / len(dices), sum(recalls) / len(recalls)


def check_metrics(n: int = 50) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    dice_ok = True
    cases = [(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [0, 1]]), 4)]
    cases += [(rng.integers(0, 4, (8, 8)), rng.integers(0, 4, (8, 8)), 4) for _ in range(n)]
    for pred, gt, c in cases:
        acc = ConfusionAccumulator(c).update(pred, gt)
        rep = report(acc)
        want = brute_force_metrics(pred, gt, c)
        worst = max(worst, *(abs(a - b) for a, b in zip((rep["miou"], rep["mdice"], rep["mrecall"]), want)))
        for cls in rep["per_class"].values():
            if cls["iou"] is not None and cls["dice"] < cls["iou"]:
                dice_ok = False
    hand = report(ConfusionAccumulator(4).update(*cases[0][:2]))
    hand_ok = (abs(hand["miou"] - 1 / 3) <= ORACLE_TOL and abs(hand["mdice"] - 0.5) <= ORACLE_TOL
               and abs(hand["mrecall"] - 0.5) <= ORACLE_TOL)
    ok = worst <= ORACLE_TOL and dice_ok and hand_ok
    return CheckResult("metrics vs per-pixel counting", ok,
                       f"max abs diff {worst:.1e}, hand 2x2 ok={hand_ok}, dice>=iou={dice_ok}", time.perf_counter() - t0)


SUITES: dict[str, Callable[[], CheckResult]] = {
    "ops": check_ops,
    "composite": check_composite_loss,
    "conv": check_conv_oracle,
    "sobel": check_sobel,
    "metrics": check_metrics,
}


def run_all(fault_op: str | None = None, fault_factor: float = 1.5) -> list[CheckResult]:
    ctx = T.inject_fault(fault_op, fault_factor) if fault_op else contextlib.nullcontext()
    with ctx:
        return [suite() for suite in SUITES.values()]
