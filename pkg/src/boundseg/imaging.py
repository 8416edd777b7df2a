"""Netpbm I/O, Sobel edges, edge pyramids, crop/scale augmentation, palettes.

Images are ``float64`` arrays of shape (H, W, 3) in [0, 1]; label maps are
integer arrays of shape (H, W); edge maps are ``float64`` (H, W) in [0, 1].
"""

from __future__ import annotations

import colorsys
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .rng import SplitMix64

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_MAX = 4.0 * math.sqrt(2.0)
SCALE_RANGE = (0.75, 1.25)


@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise ValueError(f"sample {self.id!r}: image {self.image.shape} vs labels {self.labels.shape}")


# ---------------------------------------------------------------- netpbm


class NetpbmError(ValueError):
    pass


class BadMagicError(NetpbmError):
    pass


class TruncatedError(NetpbmError):
    pass


class MaxvalError(NetpbmError):
    pass


def _read_netpbm(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != magic:
        raise BadMagicError(f"{path}: expected {magic.decode()} magic, found {buf[:2]!r}")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise TruncatedError(f"{path}: incomplete header")
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise MaxvalError(f"{path}: maxval must be 255, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    if len(buf) - pos < n:
        raise TruncatedError(f"{path}: expected {n} payload bytes, found {max(len(buf) - pos, 0)}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return raster.reshape((height, width, 3) if channels == 3 else (height, width))


def _write_netpbm(path, magic: bytes, raster: np.ndarray) -> None:
    h, w = raster.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster, dtype=np.uint8).tobytes())


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6").astype(np.float64) / 255.0


def write_ppm(path, image: np.ndarray) -> None:
    _write_netpbm(path, b"P6", quantize(image))


def read_pgm(path) -> np.ndarray:
    """Gray values in [0, 1]."""
    return _read_netpbm(path, b"P5").astype(np.float64) / 255.0


def write_pgm(path, gray: np.ndarray) -> None:
    _write_netpbm(path, b"P5", quantize(gray))


def read_labels(path) -> np.ndarray:
    """Raw class indices stored one per byte."""
    return _read_netpbm(path, b"P5").astype(np.int64)


def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label values must fit in one byte")
    _write_netpbm(path, b"P5", labels.astype(np.uint8))


def image_io(path, mode: str, data: np.ndarray | None = None):
    readers = {"read-ppm": read_ppm, "read-pgm": read_pgm}
    writers = {"write-ppm": write_ppm, "write-pgm": write_pgm}
    if mode in readers:
        return readers[mode](path)
    if mode in writers:
        if data is None:
            raise ValueError(f"{mode} needs data")
        return writers[mode](path, data)
    raise ValueError(f"unknown image_io mode {mode!r}")


# ---------------------------------------------------------------- edges


_DIFF = np.array([-1.0, 0.0, 1.0])
_SMOOTH = np.array([1.0, 2.0, 1.0])


def sobel_components(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gx, gy) of the channel-mean image with replicate padding.

    Applied as the separable pair difference -> smoothing, which equals the
    3x3 kernels exactly in real arithmetic and cancels to exact zeros on
    flat regions in floating point.
    """
    gray = np.asarray(image, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    x = T.Tensor(gray[None])
    with T.no_grad():
        gx = T.conv2d(T.conv2d(x, T.Tensor(_DIFF.reshape(1, 1, 1, 3))), T.Tensor(_SMOOTH.reshape(1, 1, 3, 1)))
        gy = T.conv2d(T.conv2d(x, T.Tensor(_DIFF.reshape(1, 1, 3, 1))), T.Tensor(_SMOOTH.reshape(1, 1, 1, 3)))
    return gx.data[0], gy.data[0]


def sobel_edge(image: np.ndarray) -> np.ndarray:
    """Normalized Sobel gradient magnitude of the channel-mean image."""
    gx, gy = sobel_components(image)
    return np.sqrt(gx * gx + gy * gy) / SOBEL_MAX


def build_edge_pyramid(edge: np.ndarray, scale_dims: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Max-pool ``edge`` down to each requested (h, w)."""
    h, w = edge.shape
    levels = []
    for th, tw in scale_dims:
        if th < 1 or tw < 1 or h % th or w % tw:
            raise ValueError(f"cannot reach {th}x{tw} from {h}x{w} by halving")
        rh, rw = h // th, w // tw
        if rh != rw or rh & (rh - 1):
            raise ValueError(f"ratio {h}x{w} -> {th}x{tw} is not a common power of 2")
        cur = T.Tensor(edge[None])
        with T.no_grad():
            while cur.shape[1] > th:
                cur = T.resample(cur, "maxpool-2x")
        levels.append(cur.data[0].copy())
    return levels


# ---------------------------------------------------------------- augmentation


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def crop_scale(sample: Sample, scale: float, top: int, left: int, out_size: tuple[int, int]) -> Sample:
    """Nearest-neighbour rescale by ``scale`` then crop an ``out_size`` window."""
    h, w = sample.labels.shape
    sh, sw = max(1, round(h * scale)), max(1, round(w * scale))
    oh, ow = out_size
    if oh > sh or ow > sw:
        raise ValueError(f"crop {oh}x{ow} larger than scaled source {sh}x{sw}")
    if not (0 <= top <= sh - oh and 0 <= left <= sw - ow):
        raise ValueError(f"crop window at ({top}, {left}) falls outside {sh}x{sw}")
    rows = _nearest_index(sh, h)[top : top + oh]
    cols = _nearest_index(sw, w)[left : left + ow]
    return Sample(
        sample.image[np.ix_(rows, cols)].copy(),
        sample.labels[np.ix_(rows, cols)].copy(),
        sample.id,
    )


def augment_crop_scale(
    sample: Sample,
    rng: SplitMix64,
    out_size: tuple[int, int],
    scale_range: tuple[float, float] = SCALE_RANGE,
) -> Sample:
    s = rng.uniform(*scale_range)
    h, w = sample.labels.shape
    sh, sw = max(1, round(h * s)), max(1, round(w * s))
    if out_size[0] > sh or out_size[1] > sw:
        raise ValueError(f"crop {out_size} larger than scaled source {sh}x{sw} (scale {s:.3f})")
    top = rng.integers(0, sh - out_size[0])
    left = rng.integers(0, sw - out_size[1])
    return crop_scale(sample, s, top, left, out_size)


# ---------------------------------------------------------------- palette


def palette(num_classes: int) -> np.ndarray:
    """Class 0 is black; classes 1..n-1 get evenly spaced fully saturated hues."""
    table = np.zeros((num_classes, 3), dtype=np.uint8)
    n = max(num_classes - 1, 1)
    for k in range(1, num_classes):
        r, g, b = colorsys.hsv_to_rgb((k - 1) / n, 1.0, 1.0)
        table[k] = np.round(np.array([r, g, b]) * 255.0)
    return table


def colorize_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return palette(num_classes)[np.asarray(labels)].astype(np.float64) / 255.0


def labels_from_colors(image: np.ndarray, num_classes: int) -> np.ndarray:
    lookup = {tuple(c): k for k, c in enumerate(palette(num_classes).tolist())}
    q = quantize(image)
    out = np.empty(q.shape[:2], dtype=np.int64)
    for r in range(q.shape[0]):
        for c in range(q.shape[1]):
            out[r, c] = lookup[tuple(q[r, c].tolist())]
    return out


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
