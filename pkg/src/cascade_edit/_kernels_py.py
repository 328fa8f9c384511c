"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Every function has the same signature and in-place/return behaviour as its
compiled twin; results agree to floating-point rounding.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _clip_box(cx, cy, ext, H, W):
    x0 = max(math.floor(cx - ext), 0)
    x1 = min(math.ceil(cx + ext), W - 1)
    y0 = max(math.floor(cy - ext), 0)
    y1 = min(math.ceil(cy + ext), H - 1)
    return x0, x1, y0, y1


def render_ellipses(out, ellipses):
    H, W = out.shape[:2]
    for cx, cy, a, b, th, r, g, bl in np.asarray(ellipses, dtype=np.float64):
        ext = max(a, b) + 1.0
        x0, x1, y0, y1 = _clip_box(cx, cy, ext, H, W)
        if x1 < x0 or y1 < y0:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        du, dv = xs - cx, ys - cy
        ct, st = math.cos(th), math.sin(th)
        u = ct * du + st * dv
        v = -st * du + ct * dv
        rr = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        grad = np.sqrt(u * u / a ** 4 + v * v / b ** 4)
        with np.errstate(divide="ignore", invalid="ignore"):
            sdf = np.where(grad > 0.0, (rr - 1.0) * rr / grad, -min(a, b))
        cov = np.clip(0.5 - sdf, 0.0, 1.0)[..., None]
        patch = out[y0:y1 + 1, x0:x1 + 1]
        col = np.array([r, g, bl])
        out[y0:y1 + 1, x0:x1 + 1] = np.where(cov > 0.0, patch * (1.0 - cov) + col * cov, patch)


def splat_gaussians(out, points, channels, sigma, radius):
    H, W = out.shape[:2]
    inv = 1.0 / (2.0 * sigma * sigma)
    for (px, py), ch in zip(np.asarray(points, dtype=np.float64), channels):
        x0 = max(math.ceil(px - radius), 0)
        x1 = min(math.floor(px + radius), W - 1)
        y0 = max(math.ceil(py - radius), 0)
        y1 = min(math.floor(py + radius), H - 1)
        if x1 < x0 or y1 < y0:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        d2 = (xs - px) ** 2 + (ys - py) ** 2
        val = np.where(d2 <= radius * radius, np.exp(-d2 * inv), 0.0)
        view = out[y0:y1 + 1, x0:x1 + 1, ch]
        np.maximum(view, val, out=view)


def warp_bilinear(src, flow_px):
    H, W = src.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    sx = np.clip(xs + flow_px[..., 0], 0.0, W - 1)
    sy = np.clip(ys + flow_px[..., 1], 0.0, H - 1)
    xi = np.floor(sx).astype(np.int64)
    yi = np.floor(sy).astype(np.int64)
    wx = (sx - xi)[..., None]
    wy = (sy - yi)[..., None]
    xj = np.minimum(xi + 1, W - 1)
    yj = np.minimum(yi + 1, H - 1)
    return ((1.0 - wx) * (1.0 - wy) * src[yi, xi]
            + wx * (1.0 - wy) * src[yi, xj]
            + (1.0 - wx) * wy * src[yj, xi]
            + wx * wy * src[yj, xj])


def box_mean(img, win):
    return sliding_window_view(img, (win, win)).mean(axis=(-1, -2))
