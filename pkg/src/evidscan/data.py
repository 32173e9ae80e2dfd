"""Dataset container, synthetic generation, splitting, and augmentation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

__all__ = [
    "DatasetContainer",
    "SplitSpec",
    "AugmentConfig",
    "synth_longtail",
    "stratified_split",
    "augment",
    "augment_batch",
    "resize_bilinear",
]


@dataclass
class DatasetContainer:
    images: np.ndarray          # [N, C, H, W], uint8 or float32
    labels: np.ndarray          # [N] int32 class indices
    class_names: list[str]
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")
        k = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError(f"labels out of range [0, {k})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratify: bool = True

    def validate(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0,1)")


@dataclass
class AugmentConfig:
    out_size: int
    crop_scale_min: float = 0.6
    crop_scale_max: float = 1.0
    flip_prob: float = 0.5
    norm_mean: float = 0.5
    norm_std: float = 0.5


def synth_longtail(num_classes: int, base_count: int, decay: float, image_size: int, seed: int,
                   channels: int = 3) -> DatasetContainer:
    """Procedural long-tailed dataset: class k gets round(base_count * decay^k)
    samples (min 5). Each class is a Gaussian blob with a class-specific
    position, scale, and orientation, plus pixel noise. Deterministic in seed.
    """
    if num_classes < 2 or base_count < 10 or not 0.0 < decay <= 1.0:
        raise ValueError("need num_classes >= 2, base_count >= 10, decay in (0,1]")
    class_rng = Rng(seed, stream_id=1)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64) / image_size
    images, labels = [], []
    for k in range(num_classes):
        count = max(5, int(round(base_count * decay ** k)))
        # class template: blob center/scales/angle and a channel color signature
        cx, cy = class_rng.uniform(0.25, 0.75, 2)
        sx, sy = class_rng.uniform(0.06, 0.2, 2)
        theta = class_rng.uniform(0.0, np.pi)
        color = class_rng.uniform(0.4, 1.0, channels)
        sample_rng = Rng(seed, stream_id=1000 + k)
        for _ in range(count):
            jx, jy = sample_rng.normal(0.0, 0.03, 2)
            rx = (xx - cx - jx) * np.cos(theta) + (yy - cy - jy) * np.sin(theta)
            ry = -(xx - cx - jx) * np.sin(theta) + (yy - cy - jy) * np.cos(theta)
            blob = np.exp(-0.5 * ((rx / sx) ** 2 + (ry / sy) ** 2))
            img = blob[None, :, :] * color[:, None, None]
            img = img + sample_rng.normal(0.0, 0.05, img.shape)
            images.append(np.clip(img * 255.0, 0, 255).astype(np.uint8))
            labels.append(k)
    return DatasetContainer(
        images=np.stack(images, axis=0),
        labels=np.asarray(labels, dtype=np.int32),
        class_names=[f"class_{k}" for k in range(num_classes)],
        meta={"source": "synth_longtail", "seed": str(seed), "decay": str(decay)},
    )


def stratified_split(c: DatasetContainer, spec: SplitSpec) -> tuple[DatasetContainer, DatasetContainer]:
    """Per-class seeded shuffle then split; the union is a permutation of c."""
    spec.validate()
    rng = Rng(spec.seed, stream_id=7)
    train_idx, test_idx = [], []
    if spec.stratify:
        for k in range(c.num_classes):
            idx = np.flatnonzero(c.labels == k)
            if idx.size == 0:
                continue
            idx = idx[rng.permutation(idx.size)]
            n_train = int(round(spec.train_fraction * idx.size))
            if idx.size >= 2:
                n_train = min(max(n_train, 1), idx.size - 1)
            else:
                warnings.warn(f"class {k} has a single sample; assigning it to train")
                n_train = 1
            train_idx.append(idx[:n_train])
            test_idx.append(idx[n_train:])
    else:
        idx = rng.permutation(c.n)
        n_train = int(round(spec.train_fraction * c.n))
        n_train = min(max(n_train, 1), c.n - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    tr = np.concatenate(train_idx) if train_idx else np.empty(0, dtype=np.int64)
    te = np.concatenate(test_idx) if test_idx else np.empty(0, dtype=np.int64)

    def subset(idx: np.ndarray, tag: str) -> DatasetContainer:
        return DatasetContainer(images=c.images[idx], labels=c.labels[idx],
                                class_names=list(c.class_names),
                                meta={**c.meta, "split": tag})

    return subset(tr, "train"), subset(te, "test")


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a [C,H,W] float image, align_corners=False convention."""
    c, h, w = image.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = image[:, y0[:, None], x0[None, :]] * (1 - wx) + image[:, y0[:, None], x1[None, :]] * wx
    bot = image[:, y1[:, None], x0[None, :]] * (1 - wx) + image[:, y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def _normalize(img: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    return ((img / 255.0 - cfg.norm_mean) / cfg.norm_std).astype(np.float32)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: Rng, mode: str = "train") -> np.ndarray:
    """[C,H,W] uint8 -> float32 [C,out,out] in [-1,1].

    train: random resized crop (area scale in [crop_scale_min, crop_scale_max],
    square) -> horizontal flip (p = flip_prob) -> normalize.
    eval: resize -> normalize.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown augment mode {mode!r}")
    img = image.astype(np.float64)
    c, h, w = img.shape
    if mode == "train":
        scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
        side = max(1, int(round(np.sqrt(scale) * min(h, w))))
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
        img = img[:, y0:y0 + side, x0:x0 + side]
        if rng.random() < cfg.flip_prob:
            img = img[:, :, ::-1]
    if img.shape[1] != cfg.out_size or img.shape[2] != cfg.out_size:
        img = resize_bilinear(img, cfg.out_size, cfg.out_size)
    return _normalize(img, cfg)


def augment_batch(images: np.ndarray, cfg: AugmentConfig, rng: Rng, mode: str = "train") -> np.ndarray:
    return np.stack([augment(images[i], cfg, rng, mode) for i in range(images.shape[0])], axis=0)
