"""Seeded synthetic street-like scenes and their on-disk dataset format.

Classes: 0 background, 1 road band, 2 box building, 3 small disc.  Shapes
are drawn in that order, so later shapes occlude earlier ones.

On disk, each split lives in ``<root>/<split>/`` as ``NNNNN.ppm`` images and
``NNNNN_label.pgm`` label maps, indexed by ``<root>/manifest.txt`` with one
``split<TAB>image<TAB>label`` line per sample (paths relative to root).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import DatasetConfig
from .imaging import Sample, read_labels, read_ppm, write_labels, write_ppm
from .rng import SplitMix64

SPLITS = ("train", "val", "test")
CLASS_NAMES = ("background", "road-band", "box-building", "small-disc")
MANIFEST = "manifest.txt"


class DatasetError(ValueError):
    pass


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LabelAlphabetError(DatasetError):
    pass


@dataclass
class SceneSpec:
    canvas: tuple[int, int] = (64, 64)
    num_classes: int = 4
    road_count: tuple[int, int] = (1, 1)
    building_count: tuple[int, int] = (1, 3)
    disc_count: tuple[int, int] = (1, 4)
    disc_radius: tuple[int, int] = (2, 5)
    noise: float = 0.04


def _fill(image, labels, region, cls, color, rng: SplitMix64, noise: float) -> None:
    n = int(region.sum())
    if n == 0:
        return
    jitter = rng.uniform_array(-noise, noise, (n, 3))
    image[region] = np.clip(color[None, :] + jitter, 0.0, 1.0)
    labels[region] = cls


def _color(rng: SplitMix64, lo, hi) -> np.ndarray:
    return np.array([rng.uniform(a, b) for a, b in zip(lo, hi)])


def _draw(spec: SceneSpec, rng: SplitMix64) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.canvas
    yy, xx = np.mgrid[0:h, 0:w]
    base = _color(rng, (0.45, 0.5, 0.45), (0.7, 0.8, 0.75))
    image = np.clip(base[None, None, :] + rng.uniform_array(-spec.noise, spec.noise, (h, w, 3)), 0, 1)
    labels = np.zeros((h, w), dtype=np.int64)

    for _ in range(rng.integers(*spec.road_count)):
        thickness = rng.uniform(0.12, 0.25) * h
        center = rng.uniform(0.45, 0.85) * h
        slope = rng.uniform(-0.3, 0.3)
        mid = center + slope * (xx - w / 2)
        region = np.abs(yy - mid) <= thickness / 2
        _fill(image, labels, region, 1, _color(rng, (0.12, 0.12, 0.12), (0.3, 0.3, 0.32)), rng, spec.noise)

    for _ in range(rng.integers(*spec.building_count)):
        bh = rng.integers(h // 6, h // 2)
        bw = rng.integers(w // 8, w // 3)
        top = rng.integers(0, h - bh)
        left = rng.integers(0, w - bw)
        region = (yy >= top) & (yy < top + bh) & (xx >= left) & (xx < left + bw)
        _fill(image, labels, region, 2, _color(rng, (0.55, 0.25, 0.15), (0.85, 0.45, 0.3)), rng, spec.noise)

    for _ in range(rng.integers(*spec.disc_count)):
        r = rng.uniform(spec.disc_radius[0], spec.disc_radius[1])
        cy = rng.uniform(r, h - r)
        cx = rng.uniform(r, w - r)
        region = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        _fill(image, labels, region, 3, _color(rng, (0.1, 0.35, 0.75), (0.3, 0.6, 1.0)), rng, spec.noise)
    return image, labels


def _required_classes(spec: SceneSpec) -> list[int]:
    counts = (spec.road_count, spec.building_count, spec.disc_count)
    return [c for c, (lo, _) in enumerate(counts, start=1) if lo >= 1]


def generate_scene(spec: SceneSpec, rng: SplitMix64, sample_id: str = "") -> Sample:
    """Draw one scene; redraws (same stream, continued) if a required class got occluded away."""
    need = _required_classes(spec)
    for _ in range(100):
        image, labels = _draw(spec, rng)
        present = np.bincount(labels.reshape(-1), minlength=spec.num_classes)
        if all(present[c] > 0 for c in need) and present[1:].sum() > 0:
            return Sample(image, labels, sample_id)
    raise RuntimeError(f"could not draw a valid scene for {sample_id!r}")


def sample_stream(seed: int, split: str, index: int) -> SplitMix64:
    return SplitMix64(seed).child(SPLITS.index(split), index)


def generate_split(config: DatasetConfig, split: str) -> list[Sample]:
    spec = SceneSpec(canvas=config.image_size, num_classes=config.num_classes)
    n = config.splits()[split]
    return [generate_scene(spec, sample_stream(config.seed, split, i), f"{split}_{i:05d}") for i in range(n)]


def generate_dataset(config: DatasetConfig) -> str:
    """Write every split plus the manifest under ``config.data_dir``; returns the manifest path."""
    root = config.data_dir
    try:
        os.makedirs(root, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {root}: {exc}") from exc
    lines = []
    for split in SPLITS:
        os.makedirs(os.path.join(root, split), exist_ok=True)
        for i, sample in enumerate(generate_split(config, split)):
            img_rel = f"{split}/{i:05d}.ppm"
            lab_rel = f"{split}/{i:05d}_label.pgm"
            write_ppm(os.path.join(root, img_rel), sample.image)
            write_labels(os.path.join(root, lab_rel), sample.labels)
            lines.append(f"{split}\t{img_rel}\t{lab_rel}\n")
    manifest = os.path.join(root, MANIFEST)
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    return manifest


def load_dataset(manifest: str, num_classes: int = 4) -> dict[str, list[Sample]]:
    """Read samples in manifest order, grouped by split."""
    if os.path.isdir(manifest):
        manifest = os.path.join(manifest, MANIFEST)
    if not os.path.exists(manifest):
        raise MissingFileError(f"missing manifest {manifest}")
    root = os.path.dirname(os.path.abspath(manifest))
    out: dict[str, list[Sample]] = {}
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{manifest}:{lineno}: expected 3 tab-separated fields")
            split, img_rel, lab_rel = parts
            paths = [os.path.join(root, img_rel), os.path.join(root, lab_rel)]
            for p in paths:
                if not os.path.exists(p):
                    raise MissingFileError(f"missing file {p}")
            image = read_ppm(paths[0])
            labels = read_labels(paths[1])
            if image.shape[:2] != labels.shape:
                raise DimensionMismatchError(f"{paths[1]}: labels {labels.shape} vs image {image.shape[:2]}")
            if labels.max() >= num_classes:
                raise LabelAlphabetError(f"{paths[1]}: label {labels.max()} outside [0, {num_classes})")
            sample_id = f"{split}_{os.path.splitext(os.path.basename(img_rel))[0]}"
            out.setdefault(split, []).append(Sample(image, labels, sample_id))
    return out
