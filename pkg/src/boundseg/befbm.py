"""Boundary-enhanced feature bridging.

Adjacent encoded scales (l, l+1) are projected to a common width, the
coarser one is upsampled, and the two are mixed by a scalar gate computed
from their global average pools.  A per-scale boundary head reads a
one-channel boundary probability off each encoded level for the edge loss.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import init_uniform, init_zeros
from .tensor import ShapeError, Tensor


def init_befbm(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    ch = config.channels
    for i in range(1, config.num_scales):
        prefix = f"befbm.pair{i}."
        c = ch[i - 1]
        params[prefix + "proj_i"] = init_uniform(seed, prefix + "proj_i", (c, ch[i - 1], 1, 1), ch[i - 1], c)
        params[prefix + "proj_j"] = init_uniform(seed, prefix + "proj_j", (c, ch[i], 1, 1), ch[i], c)
        params[prefix + "w1"] = init_uniform(seed, prefix + "w1", (c,), c, 1)
        params[prefix + "w2"] = init_uniform(seed, prefix + "w2", (c,), c, 1)
    for l, c in enumerate(ch, start=1):
        prefix = f"befbm.boundary.l{l}."
        params[prefix + "weight"] = init_uniform(seed, prefix + "weight", (1, c, 1, 1), c, 1)
        params[prefix + "bias"] = init_zeros(prefix + "bias", (1,))
    return params


def _dot(w: Tensor, v: Tensor) -> Tensor:
    return T.reshape(T.reshape(w, (1, -1)) @ T.reshape(v, (-1, 1)), ())


def gate_alpha(z_i: Tensor, z_j: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """sigmoid(w1 . GAP(z_i) + w2 . GAP(z_j)) as a 0-d tensor."""
    c = z_i.shape[0]
    if z_j.shape[0] != c or w1.shape != (c,) or w2.shape != (c,):
        raise ShapeError(f"gate_alpha: widths differ: z_i {z_i.shape}, z_j {z_j.shape}, w1 {w1.shape}, w2 {w2.shape}")
    return T.sigmoid(_dot(w1, T.global_avg_pool(z_i)) + _dot(w2, T.global_avg_pool(z_j)))


def upsample_to(x: Tensor, hw: tuple[int, int]) -> Tensor:
    while x.shape[1] < hw[0] and x.shape[2] < hw[1]:
        x = T.resample(x, "upsample-nearest-2x")
    if x.shape[1:] != tuple(hw):
        raise ShapeError(f"cannot upsample {x.shape} to spatial {hw}")
    return x


def bridge_pair(z_i: Tensor, z_j: Tensor, alpha: Tensor | float) -> Tensor:
    """alpha * z_i + (1 - alpha) * z_j, with z_j upsampled to z_i's grid."""
    z_j = upsample_to(z_j, z_i.shape[1:])
    if z_j.shape != z_i.shape:
        raise ShapeError(f"bridge_pair: {z_i.shape} vs {z_j.shape}")
    if not isinstance(alpha, Tensor):
        alpha = T.Tensor(alpha)
    return T.scale_by(z_i, alpha) + T.scale_by(z_j, 1.0 - alpha)


def project(x: Tensor, kernel: Tensor) -> Tensor:
    return T.conv2d(x, kernel)


def bridge_level(z_i: Tensor, z_j: Tensor, params: Mapping[str, Tensor], i: int) -> tuple[Tensor, Tensor]:
    """Fuse encoded levels i and i+1 (1-based); returns (F_bridge, alpha)."""
    prefix = f"befbm.pair{i}."
    pi = project(z_i, params[prefix + "proj_i"])
    pj = upsample_to(project(z_j, params[prefix + "proj_j"]), pi.shape[1:])
    alpha = gate_alpha(pi, pj, params[prefix + "w1"], params[prefix + "w2"])
    return bridge_pair(pi, pj, alpha), alpha


def build_bridged_pyramid(encoded: Sequence[Tensor], params: Mapping[str, Tensor]) -> list[Tensor]:
    if len(encoded) < 2:
        raise ShapeError("bridging needs at least two scales")
    return [bridge_level(encoded[i - 1], encoded[i], params, i)[0] for i in range(1, len(encoded))]


def boundary_maps(encoded: Sequence[Tensor], params: Mapping[str, Tensor]) -> list[Tensor]:
    """Per-level boundary probabilities sigmoid(head_l(Z_l)), each [H_l, W_l]."""
    out = []
    for l, z in enumerate(encoded, start=1):
        prefix = f"befbm.boundary.l{l}."
        y = T.add_bias(T.conv2d(z, params[prefix + "weight"]), params[prefix + "bias"], axis=0)
        out.append(T.reshape(T.sigmoid(y), z.shape[1:]))
    return out


def edge_loss_from_maps(boundaries: Sequence[Tensor], edges: Sequence[np.ndarray]) -> Tensor:
    if len(boundaries) != len(edges):
        raise ShapeError(f"{len(boundaries)} boundary levels vs {len(edges)} edge levels")
    total = None
    for b, e in zip(boundaries, edges):
        if b.shape != np.shape(e):
            raise ShapeError(f"edge_loss: boundary {b.shape} vs edge {np.shape(e)}")
        d = b - T.Tensor(e)
        term = T.mean(d * d)
        total = term if total is None else total + term
    return total


def edge_loss(encoded: Sequence[Tensor], edges: Sequence[np.ndarray], params: Mapping[str, Tensor]) -> Tensor:
    """Sum over levels of the mean squared gap between boundary head and edge map."""
    return edge_loss_from_maps(boundary_maps(encoded, params), edges)
