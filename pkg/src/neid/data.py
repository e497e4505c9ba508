"""Paired low/normal-light datasets, training batches and a synthetic generator."""
import functools
import json
import os
from dataclasses import dataclass

import numpy as np

from . import imgcore
from .errors import EmptyDataset, MissingPair, ShapeMismatch

LOL_SPLITS = {"train": "our485", "eval": "eval15"}


@dataclass(frozen=True)
class PairedSample:
    id: str
    low_path: str
    high_path: str


@dataclass(frozen=True, eq=False)
class ArrayPair:
    """In-memory counterpart of :class:`PairedSample`."""

    id: str
    low: np.ndarray
    high: np.ndarray


@dataclass
class Batch:
    """Arrays are ``float64`` NCHW.

    ``input`` is the bicubic-downsampled low-light patch; ``target_le`` the
    normal-light patch and ``target_dr`` the low-light patch at full size.
    """

    input: np.ndarray
    target_le: np.ndarray
    target_dr: np.ndarray

    @property
    def n(self):
        return self.input.shape[0]


def _png_stems(directory):
    if not os.path.isdir(directory):
        return {}
    return {
        os.path.splitext(name)[0]: os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.lower().endswith(".png")
    }


def _scan_pair_dirs(low_dir, high_dir):
    low = _png_stems(low_dir)
    high = _png_stems(high_dir)
    unmatched = sorted(set(low) ^ set(high))
    if unmatched:
        raise MissingPair(unmatched[0])
    if not low:
        raise EmptyDataset(f"no PNG pairs under {low_dir} / {high_dir}")
    return [PairedSample(stem, low[stem], high[stem]) for stem in sorted(low)]


def scan_paired_dataset(root, layout="generic", split="train"):
    """List the image pairs under ``root`` in lexicographic order.

    ``generic`` expects ``root/low/*.png`` and ``root/high/*.png``; ``lol``
    expects the standard ``our485`` (train) / ``eval15`` (eval) folders, each
    with ``low`` and ``high`` subdirectories. ``split`` only applies to ``lol``.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise EmptyDataset(f"dataset root {root} does not exist")
    if layout == "generic":
        base = root
    elif layout == "lol":
        if split not in LOL_SPLITS:
            raise ValueError(f"unknown LoL split {split!r}")
        base = os.path.join(root, LOL_SPLITS[split])
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return _scan_pair_dirs(os.path.join(base, "low"), os.path.join(base, "high"))


@functools.lru_cache(maxsize=1024)
def _cached_u8(path):
    arr = imgcore.load_png_u8(path)
    arr.setflags(write=False)
    return arr


def load_pair(sample):
    """Both halves of a sample as float images in [0, 1]."""
    if isinstance(sample, ArrayPair):
        low, high = sample.low, sample.high
    else:
        low = _cached_u8(sample.low_path).astype(np.float64) / 255.0
        high = _cached_u8(sample.high_path).astype(np.float64) / 255.0
    if low.shape != high.shape:
        raise ShapeMismatch(f"{sample.id}: low {low.shape} vs high {high.shape}")
    return low, high


def reflect_pad_to(img, min_h, min_w):
    """Reflect-pad bottom/right so the image is at least ``min_h x min_w``."""
    h, w = img.shape[:2]
    ph, pw = max(0, min_h - h), max(0, min_w - w)
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="symmetric" if min(h, w) == 1 else "reflect")


def to_nchw(images):
    return np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2))


def sample_training_batch(samples, n, rng, patch_size=256):
    """Draw ``n`` aligned random crops with dihedral augmentation.

    Per draw, in this order: sample index, crop row, crop column, augment
    code, all from ``rng`` (a :class:`numpy.random.Generator`).
    """
    if not samples:
        raise EmptyDataset("cannot sample from an empty dataset")
    half = patch_size // 2
    inputs, targets_le, targets_dr = [], [], []
    for _ in range(n):
        sample = samples[int(rng.integers(len(samples)))]
        low, high = load_pair(sample)
        low = reflect_pad_to(low, patch_size, patch_size)
        high = reflect_pad_to(high, patch_size, patch_size)
        h, w = low.shape[:2]
        y = int(rng.integers(h - patch_size + 1))
        x = int(rng.integers(w - patch_size + 1))
        code = int(rng.integers(8))
        lo = low[y : y + patch_size, x : x + patch_size]
        hi = high[y : y + patch_size, x : x + patch_size]
        lo, hi = imgcore.apply_augment(lo, hi, code)
        inputs.append(imgcore.bicubic_resize(lo, half, half))
        targets_le.append(hi)
        targets_dr.append(lo)
    return Batch(to_nchw(inputs), to_nchw(targets_le), to_nchw(targets_dr))


def _smooth_field(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size, 3))
    for c in range(3):
        for _ in range(3):
            fy, fx = rng.uniform(0.3, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            field[..., c] += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    lo, hi = field.min(), field.max()
    return 0.15 + 0.8 * (field - lo) / (hi - lo)


def _detail_pattern(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    kind = int(rng.integers(3))
    period = float(rng.uniform(6, 24))
    if kind == 0:
        pat = ((yy // period + xx // period) % 2).astype(np.float64)
    elif kind == 1:
        angle = rng.uniform(0, np.pi)
        pat = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period)
    else:
        cy, cx = rng.uniform(0, size, size=2)
        pat = 0.5 + 0.5 * np.cos(2 * np.pi * np.hypot(yy - cy, xx - cx) / period)
    return pat[..., None]


def synth_pair(rng, size=320, sigma=0.01):
    """One (low, high, params) triple from the darkening model."""
    high = _smooth_field(rng, size) * (0.75 + 0.25 * _detail_pattern(rng, size))
    high = np.clip(high, 0.0, 1.0)
    gamma = float(rng.uniform(2.0, 4.0))
    gain = float(rng.uniform(0.1, 0.3))
    low = gain * high**gamma
    if sigma > 0:
        low = low + rng.normal(0.0, sigma, size=low.shape)
    return np.clip(low, 0.0, 1.0), high, {"gamma": gamma, "gain": gain, "sigma": sigma}


def make_synthetic_dataset(out, count, seed, size=320, sigma=0.01):
    """Write ``count`` synthetic pairs in the generic layout plus ``manifest.json``."""
    out = os.fspath(out)
    os.makedirs(os.path.join(out, "low"), exist_ok=True)
    os.makedirs(os.path.join(out, "high"), exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = {"seed": seed, "images": []}
    for i in range(count):
        image_id = f"img_{i:04d}"
        low, high, params = synth_pair(rng, size=size, sigma=sigma)
        imgcore.save_png(high, os.path.join(out, "high", image_id + ".png"))
        imgcore.save_png(low, os.path.join(out, "low", image_id + ".png"))
        manifest["images"].append({"id": image_id, **params})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
