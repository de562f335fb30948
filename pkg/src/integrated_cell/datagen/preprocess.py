"""Per-channel intensity normalization and geometric standardization.

Channel order is (membrane, nucleus[, structure]).  Masks are obtained by
thresholding the normalized reference channels at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ImageError, ShapeError

N_BINS = 256
ANGLE_TOL_DEG = 0.5
DEGENERATE_ANISOTROPY = 1e-3
SKEW_RTOL = 1e-6


def modal_intensity(channel: np.ndarray) -> float:
    """Most populous intensity, found on a 256-bin histogram of the channel's range.

    The median of the pixels in the winning bin is returned, so integer data
    with at most 256 distinct levels yields its exact modal value.
    """
    ch = np.asarray(channel, dtype=np.float64)
    lo, hi = float(ch.min()), float(ch.max())
    if hi == lo:
        return lo
    idx = np.minimum(((ch - lo) / (hi - lo) * N_BINS).astype(np.int64), N_BINS - 1)
    counts = np.bincount(idx.ravel(), minlength=N_BINS)
    winner = int(np.argmax(counts))
    return float(np.median(ch[idx == winner]))


def normalize_channel(channel: np.ndarray) -> np.ndarray:
    """Subtract the modal intensity, zero negatives, rescale the maximum to 1."""
    ch = np.asarray(channel, dtype=np.float64)
    ch = ch - modal_intensity(ch)
    ch = np.clip(ch, 0, None)
    m = ch.max()
    return ch / m if m > 0 else ch


def max_project(volume: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.asarray(volume).max(axis=axis)


def resample(img: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear rescaling of every channel by ``scale`` (e.g. source/target pixel size)."""
    if scale == 1:
        return img
    return np.stack([np.clip(ndimage.zoom(c, scale, order=1), 0, 1) for c in img])


def pad_to(img: np.ndarray, size: int) -> np.ndarray:
    c, h, w = img.shape
    if h > size or w > size:
        raise ShapeError(f"image {h}x{w} larger than target canvas {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    out = np.zeros((c, size, size), dtype=img.dtype)
    out[:, top:top + h, left:left + w] = img
    return out


def _coords(mask):
    ys, xs = np.nonzero(mask)
    return xs.astype(np.float64), ys.astype(np.float64)


def major_axis_angle(mask: np.ndarray) -> tuple[float, bool]:
    """Angle (radians, image x towards +row) of the mask's major axis and
    whether the second moments are too isotropic to define one."""
    xs, ys = _coords(mask)
    if len(xs) < 2:
        raise ImageError("mask has fewer than two pixels")
    dx, dy = xs - xs.mean(), ys - ys.mean()
    mu20, mu02, mu11 = (dx * dx).mean(), (dy * dy).mean(), (dx * dy).mean()
    spread = math.hypot(mu20 - mu02, 2 * mu11)
    degenerate = spread <= DEGENERATE_ANISOTROPY * (mu20 + mu02)
    return 0.5 * math.atan2(2 * mu11, mu20 - mu02), degenerate


def canonical_flips(mask: np.ndarray) -> tuple[bool, bool]:
    """Horizontal / vertical flips that make the mask's third central moments
    non-negative.  Near-zero skews do not trigger a flip."""
    xs, ys = _coords(mask)
    if len(xs) == 0:
        return False, False
    dx, dy = xs - xs.mean(), ys - ys.mean()
    out = []
    for d in (dx, dy):
        s3 = (d**3).sum()
        out.append(bool(s3 < -SKEW_RTOL * np.abs(d**3).sum()))
    return out[0], out[1]


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate every channel about the canvas centre so that content lying along
    ``angle`` ends up along the +x axis (bilinear, zero fill)."""
    _, h, w = img.shape
    c, s = math.cos(angle), math.sin(angle)
    # (row, col) coordinates: input = M @ output + offset
    M = np.array([[c, s], [-s, c]])
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = center - M @ center
    out = np.stack([
        ndimage.affine_transform(ch, M, offset=offset, order=1, mode="constant", cval=0.0)
        for ch in img
    ])
    return np.clip(out, 0, 1)


def shift_int(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    _, h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[:, yd, xd] = img[:, ys, xs]
    return out


@dataclass
class AlignInfo:
    angle_deg: float
    rotated: bool
    degenerate: bool
    flip_x: bool
    flip_y: bool
    shift: tuple


def align(img: np.ndarray, return_info: bool = False):
    """Rotate the cell's major axis to horizontal, flip to non-negative skew,
    then translate (whole pixels) so the nucleus centre of mass sits at the
    canvas centre."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] < 2:
        raise ShapeError("align expects a (C, H, W) image with membrane and nucleus channels")
    cell = img[0] > 0
    if not cell.any() or not (img[1] > 0).any():
        raise ImageError("empty cell or nucleus mask")

    angle, degenerate = major_axis_angle(cell)
    rotated = not degenerate and abs(math.degrees(angle)) > ANGLE_TOL_DEG
    if rotated:
        img = rotate(img, angle)

    flip_x, flip_y = canonical_flips(img[0] > 0)
    if flip_x:
        img = img[:, :, ::-1]
    if flip_y:
        img = img[:, ::-1, :]

    _, h, w = img.shape
    xs, ys = _coords(img[1] > 0)
    dy = int(round((h - 1) / 2 - ys.mean()))
    dx = int(round((w - 1) / 2 - xs.mean()))
    if dy or dx:
        img = shift_int(img, dy, dx)
    img = np.ascontiguousarray(img)
    if return_info:
        return img, AlignInfo(math.degrees(angle), rotated, degenerate, flip_x, flip_y, (dy, dx))
    return img


def preprocess(raw, image_size: int = 64, scale: float = 1.0, depth_axis: int | None = None,
               do_align: bool = True) -> np.ndarray:
    """Raw per-channel intensities -> standardized float image in [0, 1].

    ``raw`` is (C, H, W) or, with ``depth_axis`` set, (C, Z, H, W) where
    ``depth_axis`` indexes the non-channel axes (0 for Z).  Each channel is
    mode-subtracted, clamped, max-normalized and max-projected; the result is
    resampled by ``scale``, padded to ``image_size`` and aligned.
    """
    raw = np.asarray(raw)
    if raw.size == 0:
        raise ImageError("empty image")
    if not np.isfinite(raw).all():
        raise ImageError("image contains non-finite values")
    chans = []
    for ch in raw:
        ch = normalize_channel(ch)
        if depth_axis is not None:
            ch = max_project(ch, depth_axis)
        chans.append(ch)
    img = np.stack(chans)
    if img.ndim != 3:
        raise ShapeError(f"expected 2D channels after projection, got shape {img.shape}")
    img = resample(img, scale)
    img = pad_to(img, image_size)
    if do_align:
        img = align(img)
    return img
