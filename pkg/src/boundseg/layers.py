"""Small composite layers shared by the encoder and decoder."""

from __future__ import annotations

import math
import zlib
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import tensor as T
from .rng import SplitMix64
from .tensor import Tensor


def silu(x: Tensor) -> Tensor:
    """Sigmoid-gated activation x * sigmoid(x)."""
    return x * T.sigmoid(x)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w
    return y if b is None else T.add_bias(y, b, axis=1)


def mlp(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = silu(linear(x, p[prefix + "mlp1.weight"], p[prefix + "mlp1.bias"]))
    return linear(h, p[prefix + "mlp2.weight"], p[prefix + "mlp2.bias"])


def attention(
    queries: Tensor, keys: Tensor, p: Mapping[str, Tensor], prefix: str
) -> tuple[Tensor, Tensor]:
    """Single-head scaled dot-product attention.

    Returns the projected output and the [Nq, Nk] attention weights.
    """
    q = queries @ p[prefix + "wq"]
    k = keys @ p[prefix + "wk"]
    v = keys @ p[prefix + "wv"]
    scores = T.scale(q @ T.transpose(k), 1.0 / math.sqrt(q.shape[1]))
    weights = T.softmax(scores)
    return (weights @ v) @ p[prefix + "wo"], weights


def to_tokens(x: Tensor) -> Tensor:
    """[C, H, W] -> [H*W, C], row-major over pixels."""
    c, h, w = x.shape
    return T.transpose(T.reshape(x, (c, h * w)))


def from_tokens(tokens: Tensor, h: int, w: int) -> Tensor:
    n, c = tokens.shape
    return T.reshape(T.transpose(tokens), (c, h, w))


@lru_cache(maxsize=None)
def _positional_encoding(h: int, w: int, c: int) -> np.ndarray:
    def axis_pe(n: int) -> np.ndarray:
        pos = np.arange(n)[:, None]
        i = np.arange(c)[None, :]
        angle = pos / np.power(10000.0, (2 * (i // 2)) / c)
        return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))

    pe = axis_pe(h)[:, None, :] + axis_pe(w)[None, :, :]
    pe = pe.reshape(h * w, c)
    pe.flags.writeable = False
    return pe


def positional_encoding(h: int, w: int, c: int) -> np.ndarray:
    """Sum of per-axis 1-D sinusoids, shaped [H*W, C] to match ``to_tokens``."""
    return _positional_encoding(h, w, c)


def init_uniform(seed: int, name: str, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    """Glorot-uniform weights from a stream keyed by the parameter name."""
    bound = T.glorot_bound(fan_in, fan_out)
    stream = SplitMix64(seed).child(zlib.crc32(name.encode("utf-8")))
    return Tensor(stream.uniform_array(-bound, bound, shape), requires_grad=True, name=name)


def init_zeros(name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)
