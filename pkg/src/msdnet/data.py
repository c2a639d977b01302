"""Synthetic easy/hard mixture datasets and dataset file IO.

The mixture task is a two-class problem built so that compute requirements
vary per sample. "Easy" samples carry a full-image low-frequency ramp whose
orientation encodes the class: it survives aggressive downsampling, so even
a coarse look separates them. "Hard" samples hide the class in a small
high-frequency stripe patch (vertical vs horizontal) dropped at a random
grid slot among checkerboard distractor patches; block-averaging cancels
the stripes, so only fine-resolution features resolve them.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import ConfigurationError, InputError

PATCH = 4  # stripe/distractor patch side
RAMP_AMPLITUDE = 1.0
STRIPE_AMPLITUDE = 0.35
NOISE_SIGMA = 0.45
NUM_DISTRACTORS = 3


@dataclass
class Dataset:
    """Images [N,1,H,W], integer labels, and an optional difficulty flag."""

    images: np.ndarray
    labels: np.ndarray
    split: str = ""
    hard: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InputError("images must be [N, C, H, W]")
        if len(self.labels) != len(self.images):
            raise InputError("one label per image required")
        if self.hard is not None:
            self.hard = np.asarray(self.hard, dtype=bool)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str = "") -> "Dataset":
        return Dataset(
            self.images[idx],
            self.labels[idx],
            split=split or self.split,
            hard=None if self.hard is None else self.hard[idx],
        )


def _ramp_image(rng, size, label):
    ramp = np.linspace(-RAMP_AMPLITUDE, RAMP_AMPLITUDE, size)
    img = np.tile(ramp, (size, 1)) if label == 0 else np.tile(ramp[:, None], (1, size))
    return img * rng.uniform(0.8, 1.2)

def _stripe_patch(label):
    alt = np.where(np.arange(PATCH) % 2 == 0, 1.0, -1.0) * STRIPE_AMPLITUDE
    return np.tile(alt, (PATCH, 1)) if label == 0 else np.tile(alt[:, None], (1, PATCH))


def _checker_patch():
    i = np.arange(PATCH)
    return STRIPE_AMPLITUDE * np.where((i[:, None] + i[None, :]) % 2 == 0, 1.0, -1.0)


def _hard_image(rng, size, label):
    img = np.zeros((size, size))
    slots = size // PATCH
    chosen = rng.choice(slots * slots, size=NUM_DISTRACTORS + 1, replace=False)
    for j, slot in enumerate(chosen):
        r, c = divmod(int(slot), slots)
        patch = _stripe_patch(label) if j == 0 else _checker_patch()
        img[r * PATCH : (r + 1) * PATCH, c * PATCH : (c + 1) * PATCH] = patch
    return img


def generate_mixture_dataset(n: int, image_size: int = 16, hard_fraction: float = 0.4,
                             seed: int = 0) -> Dataset:
    """Deterministic two-class mixture of easy and hard samples."""
    if not 0.0 <= hard_fraction <= 1.0:
        raise ConfigurationError("hard_fraction must be in [0, 1]")
    if image_size < 2 * PATCH:
        raise ConfigurationError(f"image_size must be at least {2 * PATCH}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2  # balanced within one
    n_hard = int(round(n * hard_fraction))
    hard = np.zeros(n, dtype=bool)
    hard[rng.permutation(n)[:n_hard]] = True
    order = rng.permutation(n)
    labels = labels[order]

    images = np.empty((n, 1, image_size, image_size))
    for i in range(n):
        signal = (
            _hard_image(rng, image_size, labels[i])
            if hard[i]
            else _ramp_image(rng, image_size, labels[i])
        )
        images[i, 0] = signal + rng.normal(0.0, NOISE_SIGMA, (image_size, image_size))
    return Dataset(images, labels, hard=hard)


def split_dataset(ds: Dataset, n_train: int, n_val: int, n_test: int):
    """Disjoint train/val/test splits taken in order (generation already
    shuffles under the seed)."""
    if n_train + n_val + n_test > len(ds):
        raise ConfigurationError(
            f"requested {n_train + n_val + n_test} samples from {len(ds)}"
        )
    a, b = n_train, n_train + n_val
    return (
        ds.subset(slice(0, a), "train"),
        ds.subset(slice(a, b), "val"),
        ds.subset(slice(b, b + n_test), "test"),
    )


def save_dataset(out_dir, ds: Dataset, split: str):
    os.makedirs(out_dir, exist_ok=True)
    binio.write_array(os.path.join(out_dir, f"{split}_images.bin"), ds.images)
    with open(os.path.join(out_dir, f"{split}_labels.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "label", "hard"])
        for i in range(len(ds)):
            hard = "" if ds.hard is None else int(ds.hard[i])
            w.writerow([i, int(ds.labels[i]), hard])


def load_dataset(data_dir, split: str) -> Dataset:
    images_path = os.path.join(data_dir, f"{split}_images.bin")
    labels_path = os.path.join(data_dir, f"{split}_labels.csv")
    if not os.path.exists(images_path) or not os.path.exists(labels_path):
        raise InputError(f"no {split!r} split under {data_dir}")
    images = binio.read_array(images_path)
    labels, hard = [], []
    with open(labels_path, newline="") as f:
        for rec in csv.DictReader(f):
            labels.append(int(rec["label"]))
            hard.append(bool(int(rec["hard"])) if rec.get("hard") else False)
    return Dataset(images, np.array(labels), split=split, hard=np.array(hard))


def downsample_block_mean(images: np.ndarray, factor: int) -> np.ndarray:
    """Block-average downsample, the coarse view used by linear probes."""
    n, c, h, w = images.shape
    return images.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
