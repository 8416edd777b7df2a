"""Full segmentation network: backbone -> encoder -> bridging -> decoder."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import encode_pyramid, extract_features, init_backbone, init_encoder
from .befbm import boundary_maps, build_bridged_pyramid, edge_loss_from_maps, init_befbm
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LossWeights, ModelConfig
from .decoder import (
    decode,
    feature_tokens,
    init_decoder,
    predict_classes,
    predict_masks,
    semantic_argmax,
    upsample_masks,
)
from .imaging import build_edge_pyramid, sobel_edge
from .losses import LossBreakdown, class_presence, cls_loss, mask_loss, total_loss
from .tensor import Tensor


@dataclass
class ForwardResult:
    features: list[Tensor]
    encoded: list[Tensor]
    bridged: list[Tensor]
    queries: Tensor
    masks: Tensor  # [K, H, W] at input resolution
    class_probs: Tensor

    def labels(self) -> np.ndarray:
        return semantic_argmax(self.masks)


def image_tensor(image: np.ndarray) -> Tensor:
    return Tensor(np.asarray(image, dtype=np.float64).transpose(2, 0, 1))


class SegModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params: dict[str, Tensor] = {}
        for init in (init_backbone, init_encoder, init_befbm, init_decoder):
            self.params.update(init(self.config, seed))

    def forward(self, image: np.ndarray | Tensor) -> ForwardResult:
        x = image if isinstance(image, Tensor) else image_tensor(image)
        p = self.params
        features = extract_features(x, p, self.config)
        encoded = encode_pyramid(features, p)
        bridged = build_bridged_pyramid(encoded, p)
        z = feature_tokens(bridged[0], p)
        q = decode(z, p, self.config.decoder_rounds)
        masks = upsample_masks(predict_masks(q, bridged[0], p), self.config.image_size)
        return ForwardResult(features, encoded, bridged, q, masks, predict_classes(q, p))

    def predict(self, image: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward(image).labels()

    def edge_targets(self, image: np.ndarray) -> list[np.ndarray]:
        return build_edge_pyramid(sobel_edge(image), self.config.scale_dims())

    def loss(
        self, image: np.ndarray, labels: np.ndarray, weights: LossWeights
    ) -> tuple[Tensor, LossBreakdown]:
        out = self.forward(image)
        l_cls = cls_loss(out.class_probs, class_presence(labels, self.config.num_classes))
        l_mask = mask_loss(out.masks, labels)
        l_edge = edge_loss_from_maps(boundary_maps(out.encoded, self.params), self.edge_targets(image))
        return total_loss(l_cls, l_mask, l_edge, weights)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(path, self.params)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            if arr.shape != self.params[name].shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} vs model {self.params[name].shape}")
            self.params[name].data[...] = arr

    @classmethod
    def from_checkpoint(cls, path, config: ModelConfig) -> "SegModel":
        model = cls(config)
        model.load_state(load_checkpoint(path))
        return model
