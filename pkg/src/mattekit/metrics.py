"""Evaluation metrics.

Alpha-matte quality: SAD, MSE, and gradient error (squared difference of
Gaussian-derivative gradient magnitudes). Trimap quality: pixel accuracy
and mean IoU over the three labels. Alpha metrics are computed over a
region mask, conventionally the unknown region of the trimap the model was
evaluated with; whole-image mode is available.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .matting import LABELS, UNKNOWN

DEFAULT_GRAD_SIGMA = 1.4


class EmptyRegionWarning(UserWarning):
    """The evaluation region contained no pixels; the metric is 0 by fiat."""


def _as_region(region, shape):
    if region is None:
        return np.ones(shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != shape:
        raise ValueError(f"region shape {region.shape} != data shape {shape}")
    return region


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def sad(pred, gt, region=None):
    """Sum of absolute differences over the region."""
    pred, gt = _check_pair(pred, gt)
    region = _as_region(region, pred.shape)
    if not region.any():
        warnings.warn("empty evaluation region", EmptyRegionWarning, stacklevel=2)
        return 0.0
    return float(np.abs(pred - gt)[region].sum())


def mse(pred, gt, region=None):
    """Mean squared difference over the region."""
    pred, gt = _check_pair(pred, gt)
    region = _as_region(region, pred.shape)
    if not region.any():
        warnings.warn("empty evaluation region", EmptyRegionWarning, stacklevel=2)
        return 0.0
    d = (pred - gt)[region]
    return float((d * d).mean())


def gaussian_derivative_kernels(sigma):
    """2-d x- and y-derivative-of-Gaussian filters.

    Separable outer products of a Gaussian and its first derivative,
    truncated at ceil(3*sigma) and scaled so each kernel has unit L2 norm.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    dg = -x / (sigma * sigma) * g
    hx = np.outer(g, dg)  # responds to horizontal (x) changes
    hy = np.outer(dg, g)  # responds to vertical (y) changes
    norm = np.sqrt((hx * hx).sum())
    return hx / norm, hy / norm


def _gradient_magnitude(img, hx, hy):
    gx = ndimage.convolve(img, hx, mode="nearest")
    gy = ndimage.convolve(img, hy, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def grad_error(pred, gt, region=None, sigma_g=DEFAULT_GRAD_SIGMA):
    """Sum over the region of squared gradient-magnitude differences.

    Gradients come from derivative-of-Gaussian filtering with standard
    deviation ``sigma_g``; image borders replicate edge values.
    """
    pred, gt = _check_pair(pred, gt)
    region = _as_region(region, pred.shape)
    if not region.any():
        warnings.warn("empty evaluation region", EmptyRegionWarning, stacklevel=2)
        return 0.0
    hx, hy = gaussian_derivative_kernels(sigma_g)
    mag_p = _gradient_magnitude(pred, hx, hy)
    mag_g = _gradient_magnitude(gt, hx, hy)
    d = (mag_p - mag_g)[region]
    return float((d * d).sum())


def trimap_accuracy(pred, gt):
    """Fraction of pixels whose labels agree."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float((pred == gt).mean())


def trimap_miou(pred, gt):
    """Mean intersection-over-union across labels present in either map.

    Labels absent from both prediction and ground truth are excluded from
    the mean rather than counted as zero.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    ious = []
    for c in LABELS:
        p = pred == c
        g = gt == c
        union = (p | g).sum()
        if union == 0:
            continue
        ious.append((p & g).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


@dataclass
class MetricReport:
    """Bundle of alpha and trimap metrics for one prediction.

    Both raw sums and the conventional table scalings are carried: sad_k is
    SAD/1000 and grad_scaled is the gradient error scaled by 10^-3.
    """

    sad: float
    mse: float
    grad: float
    region: str
    pixels: int
    trimap_acc: float | None = None
    trimap_miou: float | None = None
    empty_region: bool = False
    sad_k: float = field(init=False)
    grad_scaled: float = field(init=False)

    def __post_init__(self):
        self.sad_k = self.sad / 1000.0
        self.grad_scaled = self.grad / 1000.0

    def as_dict(self):
        d = {
            "sad": self.sad,
            "sad_k": self.sad_k,
            "mse": self.mse,
            "grad": self.grad,
            "grad_scaled": self.grad_scaled,
            "region": self.region,
            "pixels": self.pixels,
            "empty_region": self.empty_region,
        }
        if self.trimap_acc is not None:
            d["trimap_acc"] = self.trimap_acc
        if self.trimap_miou is not None:
            d["trimap_miou"] = self.trimap_miou
        return d


def evaluate(alpha_pred, alpha_gt, eval_trimap=None, trimap_pred=None,
             trimap_gt=None, region="unknown", sigma_g=DEFAULT_GRAD_SIGMA):
    """Compute a full MetricReport.

    region "unknown" restricts alpha metrics to the unknown pixels of
    ``eval_trimap`` (required in that mode); "whole" uses every pixel.
    Trimap accuracy and mIoU are included when both trimap_pred and
    trimap_gt are given, and are always whole-image.
    """
    alpha_pred = np.asarray(alpha_pred, dtype=np.float64)
    if region == "unknown":
        if eval_trimap is None:
            raise ValueError("region='unknown' needs an eval_trimap")
        mask = np.asarray(eval_trimap) == UNKNOWN
    elif region == "whole":
        mask = np.ones(alpha_pred.shape, dtype=bool)
    else:
        raise ValueError(f"region must be 'whole' or 'unknown', got {region!r}")

    pixels = int(mask.sum())
    empty = pixels == 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyRegionWarning)
        report = MetricReport(
            sad=sad(alpha_pred, alpha_gt, mask),
            mse=mse(alpha_pred, alpha_gt, mask),
            grad=grad_error(alpha_pred, alpha_gt, mask, sigma_g),
            region=region,
            pixels=pixels,
            empty_region=empty,
        )
    if empty:
        warnings.warn("empty evaluation region", EmptyRegionWarning, stacklevel=2)
    if trimap_pred is not None and trimap_gt is not None:
        report.trimap_acc = trimap_accuracy(trimap_pred, trimap_gt)
        report.trimap_miou = trimap_miou(trimap_pred, trimap_gt)
    return report
