"""Datasets, binary readers and the two per-sibling noise sources.

A :class:`NoiseSpec` fixes one sample of SGD noise: the data-order stream
(:func:`epoch_order`) and the augmentation stream (:func:`augment`). Test
splits are never shuffled or augmented.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, UsageError
from .nncore import Batch, seeded_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str
    class_count: int

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise UsageError(f"split must be 'train' or 'test', not {self.split!r}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise UsageError("inputs and labels differ in length")
        if self.labels.shape[0] < 1:
            raise UsageError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise UsageError("labels outside [0, class_count)")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def feature_dims(self) -> tuple:
        return tuple(self.inputs.shape[1:])

    def batch(self, index=None) -> Batch:
        if index is None:
            return Batch(self.inputs, self.labels)
        return Batch(self.inputs[index], self.labels[index])


@dataclass(frozen=True)
class NoiseSpec:
    data_order_seed: int
    augment_seed: int
    augment_strength: float = 0.0

    def __post_init__(self):
        if self.augment_strength < 0:
            raise UsageError("augment_strength must be >= 0")

    def to_dict(self) -> dict:
        return {"data_order_seed": int(self.data_order_seed),
                "augment_seed": int(self.augment_seed),
                "augment_strength": float(self.augment_strength)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(int(d["data_order_seed"]), int(d["augment_seed"]),
                   float(d.get("augment_strength", 0.0)))


# ---------------------------------------------------------------------------
# synthetic tasks

SPIRAL_TURNS = 1.5
SPIRAL_T_MIN = 0.1


def spiral_point(t, cls):
    """Noise-free point on spiral arm ``cls`` at curve parameter ``t``."""
    angle = 2 * math.pi * SPIRAL_TURNS * t + math.pi * cls
    return t * np.cos(angle), t * np.sin(angle)


def _spiral_split(n_per_class, noise_sd, rng, split):
    xs, ys = [], []
    for c in (0, 1):
        t = rng.uniform(SPIRAL_T_MIN, 1.0, size=n_per_class)
        px, py = spiral_point(t, c)
        pts = np.stack([px, py], axis=1)
        if noise_sd > 0:
            pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), split, 2)


def gen_spirals(n_per_class: int, noise_sd: float, seed: int,
                n_test_per_class: Optional[int] = None):
    """Two interleaved 2-D spirals; returns ``(train, test)``.

    The test split comes from an independent stream derived from ``seed``.
    """
    if n_per_class < 1:
        raise UsageError("n_per_class must be >= 1")
    if noise_sd < 0:
        raise UsageError("noise_sd must be >= 0")
    n_test = n_per_class if n_test_per_class is None else n_test_per_class
    train = _spiral_split(n_per_class, noise_sd, seeded_rng(seed, "spirals/train"), "train")
    test = _spiral_split(n_test, noise_sd, seeded_rng(seed, "spirals/test"), "test")
    return train, test


def gen_blobs(n_per_class: int, sd: float, seed: int, classes: int = 4,
              n_test_per_class: Optional[int] = None):
    """Isotropic Gaussian blobs with centres evenly spaced on the unit circle."""
    if n_per_class < 1 or classes < 2:
        raise UsageError("need n_per_class >= 1 and classes >= 2")
    n_test = n_per_class if n_test_per_class is None else n_test_per_class
    angles = 2 * np.pi * np.arange(classes) / classes
    centres = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def split(n, rng, tag):
        x = np.concatenate([centres[c] + rng.normal(0, sd, size=(n, 2)) for c in range(classes)])
        y = np.repeat(np.arange(classes, dtype=np.int64), n)
        return Dataset(x, y, tag, classes)

    return (split(n_per_class, seeded_rng(seed, "blobs/train"), "train"),
            split(n_test, seeded_rng(seed, "blobs/test"), "test"))


def gen_bars(n_per_class: int, noise_sd: float, seed: int, size: int = 8,
             n_test_per_class: Optional[int] = None):
    """Single-channel images holding one bar: horizontal, vertical, diagonal or anti-diagonal.

    Four classes; bar position is random. Used by the convolutional models.
    """
    if n_per_class < 1 or size < 3:
        raise UsageError("need n_per_class >= 1 and size >= 3")
    n_test = n_per_class if n_test_per_class is None else n_test_per_class

    def draw(c, rng):
        img = np.zeros((size, size))
        k = rng.integers(0, size)
        if c == 0:
            img[k, :] = 1.0
        elif c == 1:
            img[:, k] = 1.0
        else:
            off = k - size // 2
            eye = np.eye(size, k=off)
            img = eye if c == 2 else eye[:, ::-1]
        return img

    def split(n, rng, tag):
        imgs, labels = [], []
        for c in range(4):
            for _ in range(n):
                imgs.append(draw(c, rng))
                labels.append(c)
        x = np.stack(imgs)[:, None, :, :]
        if noise_sd > 0:
            x = x + rng.normal(0, noise_sd, size=x.shape)
        return Dataset(x, np.asarray(labels, dtype=np.int64), tag, 4)

    return (split(n_per_class, seeded_rng(seed, "bars/train"), "train"),
            split(n_test, seeded_rng(seed, "bars/test"), "test"))


# ---------------------------------------------------------------------------
# binary readers


def _read_idx(path, expected_magic, what):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{what} file {path} too short for magic number", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{what} file {path} has magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{what} file {path} truncated inside dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    need = header_end + math.prod(dims)
    if len(raw) < need:
        raise FormatError(
            f"{what} file {path} truncated: payload needs {need} bytes, found {len(raw)}",
            len(raw))
    if len(raw) > need:
        raise FormatError(f"{what} file {path} has {len(raw) - need} trailing bytes", need)
    data = np.frombuffer(raw, dtype=np.uint8, count=math.prod(dims), offset=header_end)
    return data.reshape(dims)


def load_idx(images_path, labels_path, split: str = "train",
             class_count: Optional[int] = None) -> Dataset:
    """MNIST-style IDX pair. Pixels are scaled to [0, 1]; shape is (n, rows, cols)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "IDX images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "IDX labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels", 4)
    if labels.shape[0] == 0:
        raise FormatError("IDX files contain no records", 4)
    labels = labels.astype(np.int64)
    cc = int(labels.max()) + 1 if class_count is None else class_count
    if labels.max() >= cc:
        bad = int(np.argmax(labels >= cc))
        raise FormatError(f"label {labels[bad]} outside [0, {cc})", 8 + bad)
    return Dataset(images.astype(np.float64) / 255.0, labels, split, cc)


def load_cifar10(batch_paths: Sequence, split: str = "train") -> Dataset:
    """CIFAR-10 binary batches: 1 label byte then 3072 channel-major pixel bytes."""
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    xs, ys = [], []
    for path in batch_paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0:
            raise FormatError(f"CIFAR-10 file {path} is empty", 0)
        if len(raw) % CIFAR_RECORD:
            whole = len(raw) - len(raw) % CIFAR_RECORD
            raise FormatError(
                f"CIFAR-10 file {path} length {len(raw)} is not a multiple of {CIFAR_RECORD}",
                whole)
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels = rec[:, 0].astype(np.int64)
        if labels.max() > 9:
            bad = int(np.argmax(labels > 9))
            raise FormatError(f"CIFAR-10 file {path}: label byte {labels[bad]} > 9",
                              bad * CIFAR_RECORD)
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
        ys.append(labels)
    if not xs:
        raise FormatError("no CIFAR-10 files given")
    return Dataset(np.concatenate(xs), np.concatenate(ys), split, 10)


# ---------------------------------------------------------------------------
# SGD noise


def epoch_order(n: int, epoch_index: int, data_order_seed: int) -> np.ndarray:
    if n < 1:
        raise UsageError("n must be >= 1")
    return seeded_rng(data_order_seed, f"order/epoch{int(epoch_index)}").permutation(n)


MAX_SHIFT = 2


def draw_image_transforms(rng: np.random.Generator, n: int, max_shift: int = MAX_SHIFT):
    """Per-example ``(flip, dy, dx)`` with shifts uniform on ``[-max_shift, max_shift]``."""
    flips = rng.random(n) < 0.5
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    return flips, shifts


def _shift_image(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = img[..., ys, xs]
    return out


def augment(batch: Batch, augment_seed: int, iteration: int, strength: float) -> Batch:
    """Per-iteration augmentation, deterministic in ``(augment_seed, iteration)``.

    Vector inputs get additive Gaussian jitter with standard deviation
    ``strength``. Image inputs (N, C, H, W) get a random horizontal flip and a
    shift of up to two pixels with zero fill whenever ``strength > 0``.
    ``strength == 0`` returns the batch untouched.
    """
    if strength < 0:
        raise UsageError("strength must be >= 0")
    if strength == 0:
        return batch
    rng = seeded_rng(augment_seed, f"augment/{int(iteration)}")
    x = batch.inputs
    if x.ndim == 4:
        flips, shifts = draw_image_transforms(rng, x.shape[0])
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            img = x[i, :, :, ::-1] if flips[i] else x[i]
            out[i] = _shift_image(img, int(shifts[i, 0]), int(shifts[i, 1]))
        return Batch(out, batch.labels)
    return Batch(x + rng.normal(0.0, strength, size=x.shape), batch.labels)


class BatchStream:
    """Minibatch for each global iteration under one :class:`NoiseSpec`.

    Epochs hold ``n // batch_size`` batches (at least one); the tail of each
    permutation is dropped.
    """

    def __init__(self, dataset: Dataset, noise: NoiseSpec, batch_size: int):
        self.dataset = dataset
        self.noise = noise
        self.batch_size = min(batch_size, len(dataset))
        self.per_epoch = max(1, len(dataset) // self.batch_size)
        self._epoch = None
        self._perm = None

    def order(self, epoch: int) -> np.ndarray:
        if epoch != self._epoch:
            self._perm = epoch_order(len(self.dataset), epoch, self.noise.data_order_seed)
            self._epoch = epoch
        return self._perm

    def __call__(self, iteration: int) -> Batch:
        epoch, j = divmod(iteration, self.per_epoch)
        idx = self.order(epoch)[j * self.batch_size:(j + 1) * self.batch_size]
        batch = self.dataset.batch(idx)
        return augment(batch, self.noise.augment_seed, iteration, self.noise.augment_strength)


# ---------------------------------------------------------------------------
# manifest-addressable datasets


def load_dataset(spec: dict, arch: Optional[str] = None):
    """``(train, test)`` for a manifest dataset entry.

    Synthetic: ``{"name": "spirals"|"blobs"|"bars", "n_per_class", "noise_sd", "seed"}``.
    Files: ``{"name": "idx", "train": [images, labels], "test": [images, labels]}`` or
    ``{"name": "cifar10", "train": [paths...], "test": [paths...]}``.
    """
    name = spec.get("name")
    if name == "spirals":
        return gen_spirals(int(spec.get("n_per_class", 500)), float(spec.get("noise_sd", 0.05)),
                           int(spec.get("seed", 0)), spec.get("n_test_per_class"))
    if name == "blobs":
        return gen_blobs(int(spec.get("n_per_class", 250)), float(spec.get("noise_sd", 0.3)),
                         int(spec.get("seed", 0)), int(spec.get("classes", 4)),
                         spec.get("n_test_per_class"))
    if name == "bars":
        return gen_bars(int(spec.get("n_per_class", 100)), float(spec.get("noise_sd", 0.3)),
                        int(spec.get("seed", 0)), int(spec.get("size", 8)),
                        spec.get("n_test_per_class"))
    if name == "idx":
        train = load_idx(*spec["train"], split="train", class_count=spec.get("class_count"))
        test = load_idx(*spec["test"], split="test", class_count=train.class_count)
        return _shape_for(train, arch), _shape_for(test, arch)
    if name == "cifar10":
        train = load_cifar10(spec["train"], "train")
        test = load_cifar10(spec["test"], "test")
        return _shape_for(train, arch), _shape_for(test, arch)
    raise UsageError(f"unknown dataset {name!r}")


def _shape_for(ds: Dataset, arch: Optional[str]) -> Dataset:
    x = ds.inputs
    if arch == "mlp":
        x = x.reshape(len(ds), -1)
    elif x.ndim == 3:
        x = x[:, None, :, :]
    return Dataset(x, ds.labels, ds.split, ds.class_count)
