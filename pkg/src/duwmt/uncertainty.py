"""Channel-level feature uncertainty and entropy-based segmentation uncertainty.

All functions are pure numpy over stacked Monte-Carlo passes: feature
uncertainty accumulates absolute cross-pass disagreement per channel and
min-max normalizes it; segmentation uncertainty is the (normalized) entropy
of the mean softmax prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import McSamples


@dataclass
class UncertaintyBundle:
    u_v_map: np.ndarray  # (H, W), voxel uncertainty in [0, 1]
    u_s: float  # spatial mean of u_v_map
    u_c_maps: np.ndarray  # (C, H, W), per-channel disagreement maps in [0, 1]
    u_c: np.ndarray  # (C,), per-channel uncertainty values
    u_f: float  # scalar feature uncertainty, >= 0


def channel_uncertainty_maps(feats: np.ndarray) -> np.ndarray:
    """Per-channel min-max normalized cross-pass disagreement maps.

    For each channel, sums |pass_p - pass_q| elementwise over all unordered
    pass pairs, then rescales the map to [0, 1]. A constant accumulation map
    (zero disagreement everywhere) normalizes to all zeros.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 4:
        raise ShapeError(f"expected (T, C, H, W) features, got shape {feats.shape}")
    t = feats.shape[0]
    if t < 2:
        raise ValueError(f"need at least 2 passes, got {t}")
    # sum over unordered pairs via the order-statistic identity
    # sum_{p<q} |x_p - x_q| = sum_k (2k - T + 1) * x_(k); sorting first makes
    # the result bitwise invariant to any permutation of the passes, and
    # removing the per-element minimum keeps zero disagreement exactly zero
    ranked = np.sort(feats, axis=0)
    rel = ranked - ranked[:1]
    coef = (2.0 * np.arange(t) - t + 1.0).reshape(t, 1, 1, 1)
    acc = (coef * rel).sum(axis=0)
    lo = acc.min(axis=(1, 2), keepdims=True)
    hi = acc.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    out = np.zeros_like(acc)
    np.divide(acc - lo, span, out=out, where=span > 0)
    return out


def channel_uncertainty_values(u_c_maps: np.ndarray) -> np.ndarray:
    """Spatial mean of each channel's uncertainty map."""
    u_c_maps = np.asarray(u_c_maps, dtype=np.float64)
    return u_c_maps.mean(axis=(-2, -1))


def feature_uncertainty(u_c: np.ndarray) -> float:
    """Mean excess of the channel uncertainties above the least uncertain one."""
    u_c = np.asarray(u_c, dtype=np.float64)
    if u_c.size == 0:
        raise ValueError("need at least one channel uncertainty value")
    return float(np.mean(u_c - u_c.min()))


def mean_probs(probs: np.ndarray) -> np.ndarray:
    """Mean prediction across passes, bitwise invariant to pass order."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.sort(probs, axis=0, kind="stable").mean(axis=0)


def voxel_uncertainty(probs: np.ndarray, normalize: bool = True) -> tuple[np.ndarray, float]:
    """Entropy of the mean prediction across passes.

    Returns the per-voxel map and its spatial mean. With `normalize` the raw
    natural-log entropy is divided by log(num_classes), pinning the map to
    [0, 1] with exact endpoints at one-hot (0) and uniform (1) predictions.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 4:
        raise ShapeError(f"expected (T, M, H, W) probabilities, got shape {probs.shape}")
    if probs.shape[0] < 2:
        raise ValueError(f"need at least 2 passes, got {probs.shape[0]}")
    sums = probs.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-3:
        raise ValueError("per-voxel probabilities must lie on the simplex")
    mean = mean_probs(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(mean > 0.0, mean * np.log(mean), 0.0)
    h = -plogp.sum(axis=0)
    if normalize:
        h = h / np.log(probs.shape[1])
        h = np.clip(h, 0.0, 1.0)
    return h, float(h.mean())


def estimate(mc: McSamples, normalize_entropy: bool = True) -> UncertaintyBundle:
    """Full uncertainty bundle for one input's Monte-Carlo samples."""
    u_c_maps = channel_uncertainty_maps(mc.feats)
    u_c = channel_uncertainty_values(u_c_maps)
    u_f = feature_uncertainty(u_c)
    u_v_map, u_s = voxel_uncertainty(mc.probs, normalize=normalize_entropy)
    return UncertaintyBundle(u_v_map=u_v_map, u_s=u_s, u_c_maps=u_c_maps, u_c=u_c, u_f=u_f)
