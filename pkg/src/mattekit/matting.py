"""Non-neural matting algebra.

Compositing, the optimal trimap induced by a ground-truth alpha, random
trimap degradation via morphology, and fusion of an adapted trimap with a
predicted alpha. All functions are pure and operate on plain numpy arrays:

* alpha mattes: float arrays in [0, 1], shape (H, W)
* trimaps: uint8 label arrays with values in {BG, UNKNOWN, FG}, shape (H, W)
* RGB images: float arrays in [0, 1], shape (H, W, 3)
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

BG = 0
UNKNOWN = 1
FG = 2

LABELS = (BG, UNKNOWN, FG)

# De facto 8-bit gray encoding for trimap files.
TRIMAP_GRAY = {BG: 0, UNKNOWN: 128, FG: 255}
GRAY_TO_LABEL = {v: k for k, v in TRIMAP_GRAY.items()}

DEFAULT_EPS = 1.0 / 512.0


class ExtentError(ValueError):
    """Operands disagree on spatial extent."""


def _check_extents(*arrays):
    base = arrays[0].shape[:2]
    for a in arrays[1:]:
        if a.shape[:2] != base:
            raise ExtentError(f"extent mismatch: {a.shape[:2]} vs {base}")


def composite(fg, bg, alpha):
    """Blend foreground over background: I = alpha*F + (1-alpha)*B per channel.

    Output is clamped to [0, 1] purely against round-off; valid inputs never
    actually clip.
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_extents(fg, bg, alpha)
    a = alpha[..., None] if fg.ndim == 3 else alpha
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def derive_optimal_trimap(alpha_gt, eps=DEFAULT_EPS):
    """Three-way split of an alpha matte into definite and blended pixels.

    alpha <= eps is background, alpha >= 1-eps is foreground, everything
    between is unknown. eps=0 gives the exact 0/1 rule; the nonzero default
    absorbs quantization noise in stored mattes.
    """
    if not 0.0 <= eps < 0.5:
        raise ValueError(f"eps must be in [0, 0.5), got {eps}")
    alpha_gt = np.asarray(alpha_gt, dtype=np.float64)
    tri = np.full(alpha_gt.shape, UNKNOWN, dtype=np.uint8)
    tri[alpha_gt <= eps] = BG
    tri[alpha_gt >= 1.0 - eps] = FG
    return tri


def _structuring_element(radius, element):
    if element == "square":
        return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    if element == "disk":
        yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
        return (yy * yy + xx * xx) <= radius * radius
    raise ValueError(f"unknown structuring element: {element!r}")


def dilate(mask, radius, element="disk"):
    """Minkowski dilation of a boolean plane. Radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_structuring_element(radius, element))


def erode(mask, radius, element="disk"):
    """Minkowski erosion of a boolean plane; pixels beyond the border count
    as foreground so the closing property erode(dilate(m)) >= m holds on the
    finite domain. Radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=_structuring_element(radius, element),
                                  border_value=1)


def degrade_trimap(t_opt, r_fg, r_bg, element="disk"):
    """Coarsen a trimap by eroding its definite regions.

    The foreground region shrinks by r_fg, the background by r_bg, and every
    pixel that leaves a definite region becomes unknown. The unknown region
    therefore only ever grows.
    """
    t_opt = np.asarray(t_opt)
    fg_kept = erode(t_opt == FG, r_fg, element)
    bg_kept = erode(t_opt == BG, r_bg, element)
    out = np.full(t_opt.shape, UNKNOWN, dtype=np.uint8)
    out[fg_kept & (t_opt == FG)] = FG
    out[bg_kept & (t_opt == BG)] = BG
    return out


def random_degrade_radii(rng, d_min=3, d_max=15):
    """Independent uniform radii for foreground and background erosion."""
    if d_min > d_max or d_min < 0:
        raise ValueError(f"bad radius range [{d_min}, {d_max}]")
    return int(rng.integers(d_min, d_max + 1)), int(rng.integers(d_min, d_max + 1))


def fuse_alpha(alpha_pred, t_adapted):
    """Overwrite a predicted alpha with exact labels outside the unknown region."""
    alpha_pred = np.asarray(alpha_pred, dtype=np.float64)
    t_adapted = np.asarray(t_adapted)
    _check_extents(alpha_pred, t_adapted)
    out = alpha_pred.copy()
    out[t_adapted == FG] = 1.0
    out[t_adapted == BG] = 0.0
    return out


def trimap_to_gray(trimap):
    """Encode labels as the 0/128/255 gray convention."""
    trimap = np.asarray(trimap)
    gray = np.empty(trimap.shape, dtype=np.uint8)
    for label, g in TRIMAP_GRAY.items():
        gray[trimap == label] = g
    return gray


def gray_to_trimap(gray, snap=False):
    """Decode a 0/128/255 gray plane back to labels.

    Other gray levels are rejected unless ``snap`` maps them to the nearest
    of the three legal values.
    """
    gray = np.asarray(gray)
    if snap:
        levels = np.array([0, 128, 255], dtype=np.int64)
        idx = np.abs(gray.astype(np.int64)[..., None] - levels).argmin(axis=-1)
        return idx.astype(np.uint8)
    legal = np.isin(gray, list(TRIMAP_GRAY.values()))
    if not legal.all():
        bad = np.unique(np.asarray(gray)[~legal])
        raise ValueError(f"illegal trimap gray levels {bad.tolist()}; "
                         f"expected {{0, 128, 255}} (use snap to coerce)")
    out = np.empty(gray.shape, dtype=np.uint8)
    for g, label in GRAY_TO_LABEL.items():
        out[gray == g] = label
    return out


def trimap_to_value_plane(trimap):
    """Network input encoding of a trimap: one channel with BG=0, UNKNOWN=0.5, FG=1."""
    return np.asarray(trimap, dtype=np.float64) / 2.0
