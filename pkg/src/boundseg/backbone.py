"""Multi-scale convolutional features and per-scale transformer encoding."""

from __future__ import annotations

from typing import Mapping

from . import tensor as T
from .config import ModelConfig
from .layers import attention, from_tokens, init_uniform, init_zeros, mlp, positional_encoding, silu, to_tokens
from .tensor import ShapeError, Tensor


def init_backbone(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    widths = [3, *config.stem_channels]
    for i in (1, 2):
        name = f"backbone.stem{i}"
        cin, cout = widths[i - 1], widths[i]
        params[name + ".weight"] = init_uniform(seed, name + ".weight", (cout, cin, 3, 3), cin * 9, cout * 9)
        params[name + ".bias"] = init_zeros(name + ".bias", (cout,))
    cin = config.stem_channels[-1]
    for l, cout in enumerate(config.channels, start=1):
        name = f"backbone.level{l}"
        params[name + ".weight"] = init_uniform(seed, name + ".weight", (cout, cin, 3, 3), cin * 9, cout * 9)
        params[name + ".bias"] = init_zeros(name + ".bias", (cout,))
        cin = cout
    return params


def init_encoder(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for l, c in enumerate(config.channels, start=1):
        prefix = f"encoder.l{l}."
        for w in ("wq", "wk", "wv", "wo"):
            params[prefix + w] = init_uniform(seed, prefix + w, (c, c), c, c)
        params[prefix + "mlp1.weight"] = init_uniform(seed, prefix + "mlp1.weight", (c, 2 * c), c, 2 * c)
        params[prefix + "mlp1.bias"] = init_zeros(prefix + "mlp1.bias", (2 * c,))
        params[prefix + "mlp2.weight"] = init_uniform(seed, prefix + "mlp2.weight", (2 * c, c), 2 * c, c)
        params[prefix + "mlp2.bias"] = init_zeros(prefix + "mlp2.bias", (c,))
    return params


def _conv_block(x: Tensor, params: Mapping[str, Tensor], name: str, stride: int) -> Tensor:
    y = T.conv2d(x, params[name + ".weight"], stride=stride)
    return silu(T.add_bias(y, params[name + ".bias"], axis=0))


def extract_features(image: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> list[Tensor]:
    """Raw pyramid {F_l}: level l has shape [C_l, H/2^(l+1), W/2^(l+1)].

    The stem halves the resolution twice (to H/4); the first level keeps
    that resolution and every further level halves it again.
    """
    if image.shape != (3, *config.image_size):
        raise ShapeError(f"expected image [3, {config.image_size[0]}, {config.image_size[1]}], got {image.shape}")
    x = _conv_block(image, params, "backbone.stem1", stride=2)
    x = _conv_block(x, params, "backbone.stem2", stride=2)
    levels = []
    for l in range(1, config.num_scales + 1):
        x = _conv_block(x, params, f"backbone.level{l}", stride=1 if l == 1 else 2)
        levels.append(x)
    return levels


def encode_scale(
    features: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    use_positional: bool = True,
    return_attention: bool = False,
):
    """One pre-norm transformer encoder block over the H*W pixel tokens.

    Positional encodings enter only the attention input, so with zero
    attention and MLP weights the block returns ``features`` unchanged.
    """
    c, h, w = features.shape
    if params[prefix + "wq"].shape[0] != c:
        raise ShapeError(f"{prefix}: block width {params[prefix + 'wq'].shape[0]} vs features {features.shape}")
    x = to_tokens(features)
    u = x + T.Tensor(positional_encoding(h, w, c)) if use_positional else x
    u = T.layer_norm(u)
    attended, weights = attention(u, u, params, prefix)
    x = x + attended
    x = x + mlp(T.layer_norm(x), params, prefix)
    out = from_tokens(x, h, w)
    return (out, weights) if return_attention else out


def encode_pyramid(features: list[Tensor], params: Mapping[str, Tensor]) -> list[Tensor]:
    return [encode_scale(f, params, f"encoder.l{l}.") for l, f in enumerate(features, start=1)]
