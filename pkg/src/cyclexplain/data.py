"""Labeled image datasets: synthetic two-class generation, manifest loading, splits.

Images are single-channel square float arrays with values in [0, 1]. The
manifest loader consumes preprocessed grayscale data (PNG or raw float32);
no DICOM handling happens here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter


class DataError(Exception):
    """Raised for invalid dataset arguments or malformed input files."""


def validate_image(pixels: np.ndarray) -> np.ndarray:
    """Check the square-shape / finite / [0,1]-range contract and return float32."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DataError(f"image must be square 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(
            f"image values outside [0,1]: min={arr.min():.4g} max={arr.max():.4g}"
        )
    return arr


@dataclass
class LabeledSample:
    id: str
    image: np.ndarray
    label: int
    split: str = "train"
    median_rating: Optional[float] = None
    # ground-truth mask of the discriminative region, synthetic data only
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.image = validate_image(self.image)
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass
class DatasetSummary:
    n_total: int = 0
    n_pos: int = 0
    n_neg: int = 0
    n_train_pos: int = 0
    n_train_neg: int = 0
    n_test_pos: int = 0
    n_test_neg: int = 0

    @classmethod
    def from_samples(cls, samples: list[LabeledSample]) -> "DatasetSummary":
        s = cls()
        s.n_total = len(samples)
        s.n_pos = sum(1 for x in samples if x.label == 1)
        s.n_neg = s.n_total - s.n_pos
        s.n_train_pos = sum(1 for x in samples if x.label == 1 and x.split == "train")
        s.n_train_neg = sum(1 for x in samples if x.label == 0 and x.split == "train")
        s.n_test_pos = s.n_pos - s.n_train_pos
        s.n_test_neg = s.n_neg - s.n_train_neg
        return s


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="reflect")
    lo, hi = field_.min(), field_.max()
    return (field_ - lo) / (hi - lo + 1e-12)


def _irregular_blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Binary mask of a bright irregular blob at a random interior location."""
    radius = rng.uniform(size * 0.09, size * 0.15)
    margin = int(np.ceil(radius)) + 2
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.hypot(yy - cy, xx - cx)
    # perturb the boundary so the blob is not a disk
    wobble = gaussian_filter(rng.standard_normal((size, size)), size / 16.0)
    wobble = wobble / (np.abs(wobble).max() + 1e-12) * radius * 0.35
    return dist <= radius + wobble


def generate_synthetic_dataset(
    n: int, seed: int, size: int = 64
) -> list[LabeledSample]:
    """Deterministic class-balanced synthetic dataset.

    Class 1 images carry a bright irregular blob on a textured background
    (mask = blob support); class 0 images contain only smooth structure
    (empty mask).
    """
    if n < 2:
        raise DataError(f"n must be >= 2, got {n}")
    if size < 16:
        raise DataError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % 2
        background = 0.15 + 0.35 * _smooth_noise(rng, size, sigma=size / 8.0)
        texture = 0.06 * (_smooth_noise(rng, size, sigma=1.5) - 0.5)
        img = background + texture
        if label == 1:
            mask = _irregular_blob(rng, size)
            bump = gaussian_filter(mask.astype(np.float64), 1.0)
            img = img + 0.5 * bump
        else:
            mask = np.zeros((size, size), dtype=bool)
            # smooth wide depression, no sharp structure
            img = img - 0.08 * _smooth_noise(rng, size, sigma=size / 4.0)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        samples.append(
            LabeledSample(id=f"syn{i:05d}", image=img, label=label, mask=mask)
        )
    return samples


def _load_image_file(path: Path) -> np.ndarray:
    """Load a grayscale PNG or a raw float32 binary with its JSON sidecar."""
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    if path.suffix.lower() == ".png":
        with Image.open(path) as im:
            arr = np.asarray(im)
        if arr.ndim != 2:
            raise DataError(f"{path}: expected single-channel image, got {arr.shape}")
        if arr.dtype == np.uint8:
            return arr.astype(np.float32) / 255.0
        if arr.dtype == np.uint16:
            return arr.astype(np.float32) / 65535.0
        raise DataError(f"{path}: unsupported PNG dtype {arr.dtype}")
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise DataError(f"{path}: missing JSON sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text())
    h, w = int(meta["height"]), int(meta["width"])
    flat = np.fromfile(path, dtype="<f4")
    if flat.size != h * w:
        raise DataError(f"{path}: expected {h * w} float32 values, found {flat.size}")
    return flat.reshape(h, w)


def load_manifest(path) -> tuple[list[LabeledSample], DatasetSummary]:
    """Load samples from a CSV manifest (`id,path,label,median_rating,split`).

    Rows with a borderline median rating of exactly 3 are discarded; when a
    rating is present the label is 1 iff rating > 3. Pixel values are
    min-max rescaled to [0,1] over the whole dataset if any fall outside.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "path", "label", "median_rating", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{path}: manifest header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            rows.append((lineno, row))

    raw = []
    expected_size = None
    for lineno, row in rows:
        try:
            rating = row["median_rating"].strip()
            rating = float(rating) if rating else None
            if rating is not None and rating == 3.0:
                continue
            if rating is not None:
                label = 1 if rating > 3.0 else 0
            else:
                label = int(row["label"])
            split = row["split"].strip() or "train"
            img = _load_image_file(path.parent / row["path"])
        except DataError as exc:
            raise DataError(f"{path} row {lineno} (id={row.get('id')}): {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path} row {lineno}: malformed row ({exc})") from exc
        if img.shape[0] != img.shape[1]:
            raise DataError(f"{path} row {lineno}: image not square: {img.shape}")
        if expected_size is None:
            expected_size = img.shape[0]
        elif img.shape[0] != expected_size:
            raise DataError(
                f"{path} row {lineno}: image size {img.shape[0]} != {expected_size}"
            )
        raw.append((row["id"], img, label, split, rating))

    # dataset-level (not per-image) rescale, only when values leave [0,1]
    if raw:
        lo = min(img.min() for _, img, *_ in raw)
        hi = max(img.max() for _, img, *_ in raw)
        if lo < 0.0 or hi > 1.0:
            scale = hi - lo if hi > lo else 1.0
            raw = [
                (sid, (img - lo) / scale, label, split, rating)
                for sid, img, label, split, rating in raw
            ]

    seen = set()
    samples = []
    for sid, img, label, split, rating in raw:
        if sid in seen:
            raise DataError(f"{path}: duplicate sample id {sid!r}")
        seen.add(sid)
        samples.append(
            LabeledSample(id=sid, image=img, label=label, split=split,
                          median_rating=rating)
        )
    return samples, DatasetSummary.from_samples(samples)


def stratified_split(
    samples: list[LabeledSample], train_fraction: float, seed: int
) -> list[LabeledSample]:
    """Assign train/test splits preserving class proportions.

    Per-class train count is round(fraction * class size), half away from
    zero; the remainder goes to test. Deterministic given the seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0,1), got {train_fraction}")
    by_class = {0: [], 1: []}
    for i, s in enumerate(samples):
        by_class[s.label].append(i)
    for label, idx in by_class.items():
        if not idx:
            raise DataError(f"cannot split: class {label} has zero samples")
    rng = np.random.default_rng(seed)
    for idx in by_class.values():
        order = rng.permutation(len(idx))
        n_train = int(np.floor(train_fraction * len(idx) + 0.5))
        train_set = {idx[j] for j in order[:n_train]}
        for j in idx:
            samples[j].split = "train" if j in train_set else "test"
    return samples
