"""Dense-landmark images and mouth-state measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InvalidArgument
from .synthdata import LOWER_LIP, MOUTH, MOUTH_COLOR, REF_RES, REGION, UPPER_LIP

# darkness below this fraction of full mouth darkness is ignored
DARK_FLOOR = 0.15
SPLAT_RADIUS_SIGMAS = 3.0


@dataclass
class LandmarkImage:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    source_K: int


def splat_sigma(resolution) -> float:
    return max(resolution) / REF_RES


def rasterize(keypoints, resolution=(REF_RES, REF_RES), regions=None) -> LandmarkImage:
    """Splat each keypoint as a Gaussian dot in its region's colour channel.

    Head contour goes to R, eyes to G, mouth to B. Overlapping dots take the
    maximum, so every dot centre reads exactly 1.0.
    """
    kps = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    H, W = resolution
    if len(kps) and (kps.min() < 0 or (kps[:, 0] > W - 1).any() or (kps[:, 1] > H - 1).any()):
        raise InvalidArgument("keypoint outside frame bounds")
    if regions is None:
        regions = REGION[: len(kps)] if len(kps) <= len(REGION) else np.zeros(len(kps), np.int64)
    regions = np.ascontiguousarray(regions, dtype=np.int64)
    img = np.zeros((H, W, 3), dtype=np.float64)
    sigma = splat_sigma(resolution)
    kernels.splat_gaussians(img, np.ascontiguousarray(kps), regions, sigma, SPLAT_RADIUS_SIGMAS * sigma)
    return LandmarkImage(img, len(kps))


def rasterize_sequence(keypoints_seq, resolution=(REF_RES, REF_RES)) -> np.ndarray:
    """(n, H, W, 3) float32 stack of landmark images."""
    return np.stack([rasterize(k, resolution).image for k in keypoints_seq]).astype(np.float32) \
        if len(keypoints_seq) else np.zeros((0, *resolution, 3), np.float32)


def mouth_aperture(keypoints) -> float:
    kps = np.asarray(keypoints, dtype=np.float64)
    return float(np.linalg.norm(kps[UPPER_LIP] - kps[LOWER_LIP]))


def with_mouth_aperture(keypoints, gap: float) -> np.ndarray:
    """Copy of ``keypoints`` whose lips are opened or closed to ``gap`` pixels.

    Lip points move along the normal of the corner-to-corner axis, so the
    corners and everything outside the mouth stay put.
    """
    kps = np.array(keypoints, dtype=np.float64)
    mouth = kps[MOUTH]
    left, right = mouth[0], mouth[1]
    u = (right - left) / np.linalg.norm(right - left)
    n = np.array([-u[1], u[0]])
    mid = 0.5 * (left + right)
    cur = mouth_aperture(kps)
    if cur <= 0:
        raise InvalidArgument("mouth is fully closed; the lip profile cannot be rescaled")
    off = (mouth - mid) @ n
    mouth += np.outer(off * (gap / cur - 1.0), n)
    kps[MOUTH] = mouth
    return kps


def mouth_roi(keypoints_seq, pad: float = 2.0, resolution=(REF_RES, REF_RES)):
    """Bounding rectangle ``(x0, y0, x1, y1)`` (end-exclusive) of all mouth keypoints."""
    mouth = np.asarray(keypoints_seq, dtype=np.float64)[..., MOUTH, :].reshape(-1, 2)
    H, W = resolution
    x0 = int(max(np.floor(mouth[:, 0].min() - pad), 0))
    y0 = int(max(np.floor(mouth[:, 1].min() - pad), 0))
    x1 = int(min(np.ceil(mouth[:, 0].max() + pad) + 1, W))
    y1 = int(min(np.ceil(mouth[:, 1].max() + pad) + 1, H))
    return x0, y0, x1, y1


def aperture_from_frame(frame, mouth_roi) -> float:
    """Vertical extent in pixels of the dark mouth interior inside ``mouth_roi``.

    Each pixel contributes its darkness relative to the ROI's median (skin)
    luminance, normalised so a fully mouth-coloured pixel counts 1. Only the
    connected dark blob containing the darkest pixel is kept, so chin edges
    or background in the ROI corners do not leak in; the result is the
    largest per-column sum over that blob, which measures anti-aliased edges
    to sub-pixel precision.
    """
    x0, y0, x1, y1 = mouth_roi
    if x1 - x0 < 1 or y1 - y0 < 2:
        raise InvalidArgument(f"degenerate mouth ROI {mouth_roi}")
    frame = np.asarray(frame, dtype=np.float64)
    if x0 < 0 or y0 < 0 or x1 > frame.shape[1] or y1 > frame.shape[0]:
        raise InvalidArgument(f"mouth ROI {mouth_roi} outside frame of shape {frame.shape[:2]}")
    lum = frame[y0:y1, x0:x1].mean(axis=-1)
    ref = float(np.median(lum))
    dark = float(np.mean(MOUTH_COLOR))
    if ref - dark <= 1e-6:
        return 0.0
    cov = np.clip((ref - lum) / (ref - dark), 0.0, 1.0)
    cov[cov < DARK_FLOOR] = 0.0
    if not cov.any():
        return 0.0
    labels, _ = ndimage.label(cov > 0.0)
    blob = labels == labels.flat[int(np.argmax(cov))]
    return float(np.where(blob, cov, 0.0).sum(axis=0).max())


def aperture_from_landmark_image(image) -> float:
    """Mouth opening proxy for a landmark image: vertical spread of the mouth (B) channel.

    Returns the intensity-weighted standard deviation of row position, which
    grows monotonically with the lip gap.
    """
    b = np.asarray(image, dtype=np.float64)[..., 2]
    w = np.clip(b - 0.1, 0.0, None)
    total = w.sum()
    if total <= 1e-9:
        return 0.0
    ys = np.arange(b.shape[0], dtype=np.float64)[:, None]
    mean = (w * ys).sum() / total
    return float(np.sqrt((w * (ys - mean) ** 2).sum() / total))
