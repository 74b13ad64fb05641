"""Binary segmentation quality metrics: Dice, Jaccard, 95th-percentile
Hausdorff distance and Average Surface Distance.

Boundaries are foreground pixels with at least one background 4-neighbor,
counting the image border as background. Percentiles interpolate linearly on
the sorted distances; the 95HD takes the worse of the two directions, the ASD
pools both directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


class EmptyMaskError(ValueError):
    """Surface metrics are undefined when either mask has no foreground."""


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"expected 2-D masks, got shape {pred.shape}")
    return pred, gt


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / total


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    union = int((pred | gt).sum())
    if union == 0:
        return 1.0
    return int((pred & gt).sum()) / union


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbor (border is background)."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def surface_distances(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted nearest-boundary distances, prediction-to-truth and truth-to-prediction."""
    pred, gt = _check_pair(pred, gt)
    if not pred.any() or not gt.any():
        raise EmptyMaskError("surface distance undefined for an empty mask")
    bp = np.argwhere(boundary_mask(pred)).astype(np.float64)
    bg = np.argwhere(boundary_mask(gt)).astype(np.float64)

    def nearest(src, dst):
        out = np.empty(len(src))
        # chunked all-pairs keeps peak memory bounded on dense masks
        step = max(1, 2_000_000 // max(len(dst), 1))
        for i in range(0, len(src), step):
            d2 = ((src[i:i + step, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
            out[i:i + step] = np.sqrt(d2.min(axis=1))
        return np.sort(out)

    return nearest(bp, bg), nearest(bg, bp)


def _percentile_linear(sorted_vals: np.ndarray, q: float) -> float:
    return float(np.percentile(sorted_vals, q, method="linear"))


def hd95(d_pred_gt: np.ndarray, d_gt_pred: np.ndarray) -> float:
    """Max over directions of the 95th percentile of surface distances."""
    return max(_percentile_linear(d_pred_gt, 95.0), _percentile_linear(d_gt_pred, 95.0))


def asd(d_pred_gt: np.ndarray, d_gt_pred: np.ndarray) -> float:
    """Mean of all surface distances from both directions pooled."""
    pooled = np.concatenate([d_pred_gt, d_gt_pred])
    return float(pooled.mean())


@dataclass
class MetricsReport:
    dice_values: list[float] = field(default_factory=list)
    jaccard_values: list[float] = field(default_factory=list)
    hd95_values: list[float] = field(default_factory=list)
    asd_values: list[float] = field(default_factory=list)
    n_samples: int = 0
    n_surface_undefined: int = 0

    @property
    def dice_mean(self) -> float:
        return float(np.mean(self.dice_values)) if self.dice_values else float("nan")

    @property
    def jaccard_mean(self) -> float:
        return float(np.mean(self.jaccard_values)) if self.jaccard_values else float("nan")

    @property
    def hd95_mean(self) -> float:
        return float(np.mean(self.hd95_values)) if self.hd95_values else float("nan")

    @property
    def asd_mean(self) -> float:
        return float(np.mean(self.asd_values)) if self.asd_values else float("nan")

    def add_pair(self, pred: np.ndarray, gt: np.ndarray) -> None:
        self.n_samples += 1
        self.dice_values.append(dice(pred, gt))
        self.jaccard_values.append(jaccard(pred, gt))
        try:
            d_pg, d_gp = surface_distances(pred, gt)
        except EmptyMaskError:
            self.n_surface_undefined += 1
            return
        self.hd95_values.append(hd95(d_pg, d_gp))
        self.asd_values.append(asd(d_pg, d_gp))

    def to_dict(self) -> dict:
        return {
            "dice": self.dice_mean,
            "jaccard": self.jaccard_mean,
            "hd95": self.hd95_mean,
            "asd": self.asd_mean,
            "n_samples": self.n_samples,
            "n_surface_undefined": self.n_surface_undefined,
            "per_sample": {
                "dice": self.dice_values,
                "jaccard": self.jaccard_values,
                "hd95": self.hd95_values,
                "asd": self.asd_values,
            },
        }
