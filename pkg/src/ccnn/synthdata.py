"""Procedural weak-segmentation scenes and the IoU metric.

Each scene is a ``side x side`` grid with background label 0 and one to
three axis-aligned rectangles of distinct foreground labels.  Features are
the one-hot label map plus Gaussian noise, so a per-pixel linear model can
in principle recover the mask; only the image-level tags (and optionally
the 1-bit size flags) are meant to be used for weak training.
"""

import json
from dataclasses import dataclass

import numpy as np

LARGE_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class SynthExample:
    features: np.ndarray  # (side, side, m)
    mask: np.ndarray  # (side, side) int labels
    tags: frozenset
    size_bits: dict  # label -> area > 10% of the image
    id: int = 0

    @property
    def n(self):
        return self.mask.size

    @property
    def large_labels(self):
        return frozenset(l for l, big in self.size_bits.items() if big)

    @property
    def small_labels(self):
        return frozenset(l for l, big in self.size_bits.items() if not big)

    def to_dict(self):
        return {
            "id": self.id,
            "features": self.features.tolist(),
            "mask": self.mask.tolist(),
            "tags": sorted(self.tags),
            "size_bits": {str(l): bool(b) for l, b in sorted(self.size_bits.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            features=np.asarray(d["features"], dtype=np.float64),
            mask=np.asarray(d["mask"], dtype=np.int64),
            tags=frozenset(int(t) for t in d["tags"]),
            size_bits={int(l): bool(b) for l, b in d.get("size_bits", {}).items()},
            id=int(d.get("id", 0)),
        )


def tags_from_mask(mask):
    return frozenset(int(l) for l in np.unique(mask) if l != 0)


def size_bits_from_mask(mask):
    n = mask.size
    return {l: bool(np.sum(mask == l) > LARGE_FRACTION * n) for l in sorted(tags_from_mask(mask))}


def make_example(mask, m, noise_std, rng, id=0):
    mask = np.asarray(mask, dtype=np.int64)
    features = np.eye(m)[mask] + rng.normal(0.0, noise_std, size=mask.shape + (m,))
    return SynthExample(features, mask, tags_from_mask(mask), size_bits_from_mask(mask), id)


def generate(count, grid_side, m, noise_std, seed, first_id=0):
    """Generate ``count`` scenes; identical arguments give identical data."""
    if grid_side < 4 or m < 2:
        raise ValueError("need grid_side >= 4 and m >= 2")
    rng = np.random.default_rng(seed)
    out = []
    for e in range(count):
        mask = np.zeros((grid_side, grid_side), dtype=np.int64)
        n_objects = int(rng.integers(1, min(3, m - 1) + 1))
        labels = rng.choice(np.arange(1, m), size=n_objects, replace=False)
        for label in labels:
            h = int(rng.integers(2, grid_side * 3 // 4 + 1))
            w = int(rng.integers(2, grid_side * 3 // 4 + 1))
            top = int(rng.integers(0, grid_side - h + 1))
            left = int(rng.integers(0, grid_side - w + 1))
            mask[top : top + h, left : left + w] = label
        out.append(make_example(mask, m, noise_std, rng, id=first_id + e))
    return out


def save_dataset(examples, path):
    with open(path, "w") as fh:
        json.dump([ex.to_dict() for ex in examples], fh)


def load_dataset(path):
    with open(path) as fh:
        return [SynthExample.from_dict(d) for d in json.load(fh)]


def confusion(pred, gt, m):
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return np.bincount(gt * m + pred, minlength=m * m).reshape(m, m)


def mean_iou(pred_masks, gt_masks, m):
    """Per-class IoU and their mean, pooled over all given pixels.

    Classes absent from both prediction and ground truth get ``nan`` and are
    left out of the mean.
    """
    pred = np.asarray(pred_masks)
    gt = np.asarray(gt_masks)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    cm = confusion(pred, gt, m)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    per_class = np.full(m, np.nan)
    seen = union > 0
    per_class[seen] = inter[seen] / union[seen]
    return per_class, float(np.nanmean(per_class)) if seen.any() else float("nan")
