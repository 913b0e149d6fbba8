"""Evaluation metrics: PSNR, SSIM, mIoU and localization accuracy."""

from __future__ import annotations

import math

import numpy as np

from .losses import _check_pair, ssim_with_grad

PSNR_CAP = 100.0


def psnr(render, truth) -> float:
    """Peak signal-to-noise ratio for data in [0, 1], capped at 100 dB."""
    x, y = _check_pair(render, truth)
    d = (x - y).ravel()
    mse = math.fsum(d * d) / d.size
    if mse < 1e-10:
        return PSNR_CAP
    return -10.0 * math.log10(mse)


def ssim(render, truth) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, zero padding)."""
    return ssim_with_grad(render, truth)[0]


def classify_features(feature_map, table) -> np.ndarray:
    """Index of the nearest table row (L2) for every pixel; ties go to the lower index."""
    f = np.asarray(getattr(feature_map, "data", feature_map), dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    dist = np.sum((f[:, :, None, :] - table[None, None, :, :]) ** 2, axis=-1)
    return np.argmin(dist, axis=-1)


def relevancy(feature_map, query) -> np.ndarray:
    """Negative L2 distance of every pixel's feature to the query feature."""
    f = np.asarray(getattr(feature_map, "data", feature_map), dtype=np.float64)
    return -np.sqrt(np.sum((f - np.asarray(query, dtype=np.float64)) ** 2, axis=-1))


def iou(pred, truth) -> float:
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum() / union)


def miou(pred_masks, truth_masks) -> float:
    """Mean IoU over queries."""
    pred_masks, truth_masks = list(pred_masks), list(truth_masks)
    if len(pred_masks) != len(truth_masks):
        raise ValueError("need one predicted mask per truth mask")
    if not pred_masks:
        return 0.0
    return float(np.mean([iou(p, t) for p, t in zip(pred_masks, truth_masks)]))


def localization_accuracy(pred_points, truth_masks) -> float:
    """Fraction of (row, col) points that fall inside their truth mask."""
    pred_points, truth_masks = list(pred_points), list(truth_masks)
    if len(pred_points) != len(truth_masks):
        raise ValueError("need one point per truth mask")
    if not pred_points:
        return 0.0
    hits = [bool(np.asarray(m, bool)[int(r), int(c)]) for (r, c), m in zip(pred_points, truth_masks)]
    return float(np.mean(hits))


def language_queries(feature_map, label_features, background=None):
    """Predicted masks and argmax-relevancy points for each label query.

    A pixel belongs to label ``k``'s mask when ``k`` is its nearest entry in
    the label table (the background feature, if given, competes as an extra
    class).
    """
    table = np.asarray(label_features, dtype=np.float64)
    full = table if background is None else np.vstack([table, background])
    cls = classify_features(feature_map, full)
    masks, points = [], []
    for k in range(len(table)):
        masks.append(cls == k)
        rel = relevancy(feature_map, table[k])
        points.append(np.unravel_index(int(np.argmax(rel)), rel.shape))
    return masks, points
