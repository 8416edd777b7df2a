"""Query decoding, mask and class prediction."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import attention, init_uniform, init_zeros, mlp, to_tokens
from .tensor import ShapeError, Tensor


def init_decoder(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    d, k, c = config.embed_dim, config.queries, config.channels[0]
    params: dict[str, Tensor] = {
        "queries.init": init_uniform(seed, "queries.init", (k, d), k, d),
        "decoder.zproj": init_uniform(seed, "decoder.zproj", (c, d), c, d),
    }
    for t in range(1, config.decoder_rounds + 1):
        for block in ("cross", "self"):
            prefix = f"decoder.r{t}.{block}."
            for w in ("wq", "wk", "wv", "wo"):
                params[prefix + w] = init_uniform(seed, prefix + w, (d, d), d, d)
        prefix = f"decoder.r{t}."
        params[prefix + "mlp1.weight"] = init_uniform(seed, prefix + "mlp1.weight", (d, 2 * d), d, 2 * d)
        params[prefix + "mlp1.bias"] = init_zeros(prefix + "mlp1.bias", (2 * d,))
        params[prefix + "mlp2.weight"] = init_uniform(seed, prefix + "mlp2.weight", (2 * d, d), 2 * d, d)
        params[prefix + "mlp2.bias"] = init_zeros(prefix + "mlp2.bias", (d,))
    params["maskhead.w3"] = init_uniform(seed, "maskhead.w3", (d, d), d, d)
    params["maskhead.pixel"] = init_uniform(seed, "maskhead.pixel", (d, c, 1, 1), c, d)
    params["clshead.weight"] = init_uniform(seed, "clshead.weight", (d, config.num_classes), d, config.num_classes)
    params["clshead.bias"] = init_zeros("clshead.bias", (config.num_classes,))
    return params


def feature_tokens(pixel_features: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Flatten the bridged level to tokens and project them to the query width."""
    tokens = to_tokens(pixel_features)
    w = params["decoder.zproj"]
    if tokens.shape[1] != w.shape[0]:
        raise ShapeError(f"feature width {tokens.shape[1]} vs token projection {w.shape}")
    return T.layer_norm(tokens @ w)


def decode_step(q_prev: Tensor, z: Tensor, params: Mapping[str, Tensor], t: int, return_attention: bool = False):
    """Cross-attention to z, self-attention over queries, then MLP; all residual."""
    if q_prev.shape[1] != z.shape[1]:
        raise ShapeError(f"query width {q_prev.shape[1]} vs token width {z.shape[1]}")
    prefix = f"decoder.r{t}."
    cross, cross_w = attention(T.layer_norm(q_prev), z, params, prefix + "cross.")
    q = q_prev + cross
    qn = T.layer_norm(q)
    selfa, self_w = attention(qn, qn, params, prefix + "self.")
    q = q + selfa
    q = q + mlp(T.layer_norm(q), params, prefix)
    return (q, cross_w, self_w) if return_attention else q


def decode(z: Tensor, params: Mapping[str, Tensor], rounds: int) -> Tensor:
    q = params["queries.init"]
    for t in range(1, rounds + 1):
        q = decode_step(q, z, params, t)
    return q


def predict_masks(q: Tensor, pixel_features: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """M_k(x, y) = sigmoid(<W3 q_k, P(x, y)>), returned as [K, H, W]."""
    _, h, w = pixel_features.shape
    emb = T.conv2d(pixel_features, params["maskhead.pixel"])
    d = emb.shape[0]
    mask_emb = q @ T.transpose(params["maskhead.w3"])  # row k is W3 q_k
    logits = mask_emb @ T.reshape(emb, (d, h * w))
    return T.reshape(T.sigmoid(logits), (q.shape[0], h, w))


def predict_classes(q: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    return T.softmax(T.add_bias(q @ params["clshead.weight"], params["clshead.bias"], axis=1))


def upsample_masks(masks: Tensor, hw: tuple[int, int]) -> Tensor:
    while masks.shape[1] < hw[0]:
        masks = T.resample(masks, "upsample-nearest-2x")
    if masks.shape[1:] != tuple(hw):
        raise ShapeError(f"cannot upsample masks {masks.shape} to {hw}")
    return masks


def semantic_argmax(masks: np.ndarray | Tensor) -> np.ndarray:
    """Per-pixel argmax over queries; ties go to the lowest index."""
    m = masks.data if isinstance(masks, Tensor) else np.asarray(masks)
    return np.argmax(m, axis=0).astype(np.int64)
