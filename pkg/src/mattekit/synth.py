"""Procedural training data.

Foregrounds with genuinely fractional alpha edges (soft discs, soft
strands), smooth gradient backgrounds with an optional hard mode that
pushes the background color toward the foreground's, sample assembly by
compositing, unknown-centered cropping, and affine augmentation. Everything
is driven by explicit numpy Generators so datasets are reproducible
byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .matting import (
    UNKNOWN,
    composite,
    degrade_trimap,
    derive_optimal_trimap,
    random_degrade_radii,
)
from .netpbm import (
    dequantize,
    quantize_unit,
    read_alpha,
    read_image,
    read_trimap,
    write_alpha,
    write_image,
    write_trimap,
)

MANIFEST_NAME = "manifest.json"


@dataclass
class SampleRecord:
    image: np.ndarray      # (H, W, 3) float in [0,1], == composite(fg, bg, alpha_gt)
    trimap_in: np.ndarray  # (H, W) uint8 labels, the degraded input trimap
    alpha_gt: np.ndarray   # (H, W) float in [0,1]
    fg: np.ndarray
    bg: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.alpha_gt.shape


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    scale_range: tuple = (0.75, 1.5)
    rotation_range: tuple = (-45.0, 45.0)
    crop_min: int = 64
    crop_max: int = 160
    out_size: int = 64

    def __post_init__(self):
        if self.crop_min > self.crop_max:
            raise ValueError(f"crop_min {self.crop_min} > crop_max {self.crop_max}")
        if self.out_size <= 0:
            raise ValueError("out_size must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0,1]")

    @classmethod
    def disabled(cls, out_size=64):
        return cls(flip_prob=0.0, scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0),
                   crop_min=out_size, crop_max=out_size, out_size=out_size)


def _smooth_field(size, rng, cells=4, amplitude=1.0):
    """Low-resolution noise upsampled bilinearly: a smooth random field."""
    coarse = rng.uniform(-amplitude, amplitude, (cells, cells))
    return _resize_plane(coarse, size, size, order=1)


def _color_plane(size, base_rgb, rng, grad_amp=0.25, noise_amp=0.0):
    h = w = size
    out = np.empty((h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * yy + np.sin(theta) * xx) / max(h, w)
    ramp -= ramp.mean()
    for c in range(3):
        chan = base_rgb[c] + grad_amp * rng.uniform(-1, 1) * ramp
        if noise_amp > 0:
            chan = chan + noise_amp * _smooth_field(size, rng, cells=6)
        out[..., c] = chan
    return np.clip(out, 0.0, 1.0)


def gen_foreground(kind, size, rng, **params):
    """Procedural foreground: returns (rgb, alpha), both float in [0,1].

    "disc": a filled disc whose alpha ramps linearly from 1 at R_inner to 0
    at R_outer. "strands": a handful of soft-edged random polylines.
    """
    if kind == "disc":
        return _gen_disc(size, rng, **params)
    if kind == "strands":
        return _gen_strands(size, rng, **params)
    raise ValueError(f"unknown foreground kind {kind!r}")


def _gen_disc(size, rng, r_outer=None, r_inner=None, jitter=None):
    half = size / 2.0
    if r_outer is None:
        lo, hi = 18.0 * size / 64.0, 24.0 * size / 64.0
        r_outer = rng.uniform(lo, hi)
    if r_inner is None:
        feather = rng.uniform(6.0, 12.0) * size / 64.0
        r_inner = r_outer - feather
    if not 0.0 < r_inner < r_outer:
        raise ValueError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    if r_outer > half:
        raise ValueError(f"r_outer {r_outer} exceeds canvas half-size {half}")
    if jitter is None:
        jitter = 6.0 * size / 64.0
    jy = rng.uniform(-jitter, jitter)
    jx = rng.uniform(-jitter, jitter)
    cy, cx = half - 0.5 + jy, half - 0.5 + jx
    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    alpha = np.clip((r_outer - dist) / (r_outer - r_inner), 0.0, 1.0)
    base = rng.uniform(0.25, 0.95, 3)
    fg = _color_plane(size, base, rng, grad_amp=0.2)
    return fg, alpha


def _segment_distance(yy, xx, p0, p1):
    v = p1 - p0
    l2 = float(v @ v)
    if l2 == 0.0:
        return np.sqrt((yy - p0[0]) ** 2 + (xx - p0[1]) ** 2)
    t = ((yy - p0[0]) * v[0] + (xx - p0[1]) * v[1]) / l2
    t = np.clip(t, 0.0, 1.0)
    py = p0[0] + t * v[0]
    px = p0[1] + t * v[1]
    return np.sqrt((yy - py) ** 2 + (xx - px) ** 2)


def _gen_strands(size, rng, n_strands=None, width=None, feather=None):
    if n_strands is None:
        n_strands = int(rng.integers(1, 4))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    alpha = np.zeros((size, size))
    for _ in range(n_strands):
        w = rng.uniform(3.0, 6.0) * size / 64.0 if width is None else width
        f = rng.uniform(3.5, 6.0) * size / 64.0 if feather is None else feather
        n_pts = int(rng.integers(3, 5))
        pts = [rng.uniform(0.1 * size, 0.9 * size, 2)]
        for _ in range(n_pts - 1):
            step = rng.uniform(-0.3 * size, 0.3 * size, 2)
            pts.append(np.clip(pts[-1] + step, 0, size - 1))
        for p0, p1 in zip(pts[:-1], pts[1:]):
            d = _segment_distance(yy, xx, p0, p1)
            alpha = np.maximum(alpha, np.clip((w + f - d) / f, 0.0, 1.0))
    base = rng.uniform(0.25, 0.95, 3)
    fg = _color_plane(size, base, rng, grad_amp=0.2)
    return fg, alpha


def gen_background(size, rng, hard=False, fg_rgb=None, texture=True):
    """Smooth gradient background; hard mode hugs the foreground's palette."""
    if hard and fg_rgb is not None:
        base = np.clip(np.asarray(fg_rgb) + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
    else:
        base = rng.uniform(0.05, 0.95, 3)
    return _color_plane(size, base, rng, grad_amp=0.35,
                        noise_amp=0.1 if texture else 0.0)


def make_sample(fg, alpha, bg, degrade_radii, element="disk", meta=None):
    """Assemble a training sample.

    Planes are snapped to the 8-bit grid first so the on-disk record and the
    in-memory record satisfy the same compositing identity; the image is
    then exactly composite(fg, bg, alpha).
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise ValueError(f"extent mismatch: fg {fg.shape}, bg {bg.shape}, "
                         f"alpha {alpha.shape}")
    fg = dequantize(quantize_unit(fg))
    bg = dequantize(quantize_unit(bg))
    alpha = dequantize(quantize_unit(alpha))
    image = composite(fg, bg, alpha)
    r_fg, r_bg = degrade_radii
    t_opt = derive_optimal_trimap(alpha)
    t_in = degrade_trimap(t_opt, r_fg, r_bg, element=element)
    m = dict(meta or {})
    m.setdefault("degrade_radii", [int(r_fg), int(r_bg)])
    return SampleRecord(image=image, trimap_in=t_in, alpha_gt=alpha,
                        fg=fg, bg=bg, meta=m)


def synth_sample(size, rng, kind="disc", hard=False, degrade_range=(3, 8)):
    """One-stop generation of a fresh sample."""
    fg, alpha = gen_foreground(kind, size, rng)
    bg = gen_background(size, rng, hard=hard,
                        fg_rgb=fg.reshape(-1, 3).mean(axis=0))
    radii = random_degrade_radii(rng, *degrade_range)
    return make_sample(fg, alpha, bg, radii,
                       meta={"kind": kind, "hard": bool(hard)})


def _resize_plane(plane, out_h, out_w, order):
    h, w = plane.shape[:2]
    if (h, w) == (out_h, out_w):
        return plane.copy()
    yy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    gy, gx = np.meshgrid(yy, xx, indexing="ij")
    coords = np.stack([gy, gx])
    if plane.ndim == 3:
        return np.stack([ndimage.map_coordinates(plane[..., c], coords, order=order,
                                                 mode="nearest")
                         for c in range(plane.shape[2])], axis=-1)
    return ndimage.map_coordinates(plane, coords, order=order, mode="nearest")


def _resize_sample(sample, out_size):
    if sample.size == (out_size, out_size):
        return sample
    fg = _resize_plane(sample.fg, out_size, out_size, order=1)
    bg = _resize_plane(sample.bg, out_size, out_size, order=1)
    alpha = np.clip(_resize_plane(sample.alpha_gt, out_size, out_size, order=1), 0, 1)
    tri = _resize_plane(sample.trimap_in, out_size, out_size, order=0)
    return SampleRecord(image=composite(fg, bg, alpha), trimap_in=tri,
                        alpha_gt=alpha, fg=fg, bg=bg, meta=dict(sample.meta))


def crop_on_unknown(sample, crop_size, rng, out_size=None):
    """Crop a square window centered on a random unknown pixel.

    The center is uniform over the unknown region of the input trimap; the
    window is clamped to the image. Without unknown pixels the center falls
    back to the image center and meta records the fallback. The crop is
    finally resized to ``out_size`` (default: keep crop_size).
    """
    h, w = sample.size
    if crop_size > min(h, w):
        raise ValueError(f"crop_size {crop_size} exceeds image extent {h}x{w}")
    ys, xs = np.nonzero(sample.trimap_in == UNKNOWN)
    meta = dict(sample.meta)
    if len(ys) == 0:
        cy, cx = h // 2, w // 2
        meta["crop_fallback"] = True
    else:
        pick = int(rng.integers(0, len(ys)))
        cy, cx = int(ys[pick]), int(xs[pick])
    meta["crop_center"] = [cy, cx]
    top = min(max(cy - crop_size // 2, 0), h - crop_size)
    left = min(max(cx - crop_size // 2, 0), w - crop_size)
    sl = (slice(top, top + crop_size), slice(left, left + crop_size))
    cropped = SampleRecord(
        image=sample.image[sl].copy(),
        trimap_in=sample.trimap_in[sl].copy(),
        alpha_gt=sample.alpha_gt[sl].copy(),
        fg=sample.fg[sl].copy(),
        bg=sample.bg[sl].copy(),
        meta=meta,
    )
    if out_size is None or out_size == crop_size:
        return cropped
    return _resize_sample(cropped, out_size)


def _affine_coords(h, w, scale, theta_deg, flip):
    """Output-pixel coordinates mapped back into the input plane."""
    theta = np.deg2rad(theta_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    gy -= cy
    gx -= cx
    # Forward map is flip, then scale, then rotate; invert it here.
    cos_t, sin_t = np.cos(-theta), np.sin(-theta)
    ry = cos_t * gy - sin_t * gx
    rx = sin_t * gy + cos_t * gx
    ry /= scale
    rx /= scale
    if flip:
        rx = -rx
    return np.stack([ry + cy, rx + cx])


def augment(sample, cfg, rng):
    """Random flip, isotropic rescale, and rotation.

    Foreground, background, and alpha are warped bilinearly, the trimap with
    nearest labels, and the image is re-composited from the warped planes so
    the compositing identity survives augmentation.
    """
    flip = bool(rng.random() < cfg.flip_prob)
    scale = float(rng.uniform(*cfg.scale_range))
    theta = float(rng.uniform(*cfg.rotation_range))
    h, w = sample.size
    coords = _affine_coords(h, w, scale, theta, flip)

    def warp(plane, order):
        if plane.ndim == 3:
            return np.stack([ndimage.map_coordinates(plane[..., c], coords,
                                                     order=order, mode="nearest")
                             for c in range(plane.shape[2])], axis=-1)
        return ndimage.map_coordinates(plane, coords, order=order, mode="nearest")

    fg = np.clip(warp(sample.fg, 1), 0, 1)
    bg = np.clip(warp(sample.bg, 1), 0, 1)
    alpha = np.clip(warp(sample.alpha_gt, 1), 0, 1)
    tri = warp(sample.trimap_in, 0)
    meta = dict(sample.meta)
    meta["augment"] = {"flip": flip, "scale": scale, "rotation_deg": theta}
    return SampleRecord(image=composite(fg, bg, alpha), trimap_in=tri,
                        alpha_gt=alpha, fg=fg, bg=bg, meta=meta)


# ---------------------------------------------------------------------------
# Dataset directory


def _sample_paths(directory, idx):
    stem = os.path.join(directory, f"{idx:04d}")
    return {
        "image": stem + "_image.ppm",
        "trimap": stem + "_trimap.pgm",
        "alpha": stem + "_alpha.pgm",
        "fg": stem + "_fg.ppm",
        "bg": stem + "_bg.ppm",
    }


def write_dataset(directory, count, seed, size=64, kind="disc", hard_frac=0.25,
                  degrade_range=(3, 8)):
    """Generate ``count`` samples into a directory, fully determined by seed."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "seed": int(seed),
        "count": int(count),
        "size": int(size),
        "kind": kind,
        "hard_frac": float(hard_frac),
        "degrade_range": [int(r) for r in degrade_range],
    }
    kinds = ("disc", "strands")
    for i in range(count):
        rng = np.random.default_rng([int(seed), i])
        k = kinds[i % 2] if kind == "mixed" else kind
        hard = bool(rng.random() < hard_frac)
        s = synth_sample(size, rng, kind=k, hard=hard, degrade_range=degrade_range)
        paths = _sample_paths(directory, i)
        write_image(paths["image"], s.image)
        write_trimap(paths["trimap"], s.trimap_in)
        write_alpha(paths["alpha"], s.alpha_gt)
        write_image(paths["fg"], s.fg)
        write_image(paths["bg"], s.bg)
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return manifest


def read_manifest(directory):
    with open(os.path.join(directory, MANIFEST_NAME)) as fp:
        return json.load(fp)


def read_sample(directory, idx):
    paths = _sample_paths(directory, idx)
    return SampleRecord(
        image=read_image(paths["image"]),
        trimap_in=read_trimap(paths["trimap"]),
        alpha_gt=read_alpha(paths["alpha"]),
        fg=read_image(paths["fg"]),
        bg=read_image(paths["bg"]),
        meta={"index": idx},
    )


def read_dataset(directory):
    manifest = read_manifest(directory)
    samples = [read_sample(directory, i) for i in range(manifest["count"])]
    return samples, manifest
