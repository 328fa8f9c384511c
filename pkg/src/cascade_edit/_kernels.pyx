# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, floor, cos, sin, ceil, fabs

cnp.import_array()


def render_ellipses(double[:, :, ::1] out, double[:, ::1] ellipses):
    """Composite anti-aliased filled ellipses onto ``out`` in place.

    Each row of ``ellipses`` is ``(cx, cy, a, b, theta, r, g, b)``.
    """
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef Py_ssize_t n = ellipses.shape[0]
    cdef Py_ssize_t k, x, y, x0, x1, y0, y1, c
    cdef double cx, cy, a, b, th, ct, st, u, v, du, dv, r, g, sdf, cov, ext
    cdef double col[3]
    for k in range(n):
        cx = ellipses[k, 0]
        cy = ellipses[k, 1]
        a = ellipses[k, 2]
        b = ellipses[k, 3]
        th = ellipses[k, 4]
        col[0] = ellipses[k, 5]
        col[1] = ellipses[k, 6]
        col[2] = ellipses[k, 7]
        ct = cos(th)
        st = sin(th)
        ext = (a if a > b else b) + 1.0
        x0 = <Py_ssize_t>floor(cx - ext)
        x1 = <Py_ssize_t>ceil(cx + ext)
        y0 = <Py_ssize_t>floor(cy - ext)
        y1 = <Py_ssize_t>ceil(cy + ext)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > W - 1:
            x1 = W - 1
        if y1 > H - 1:
            y1 = H - 1
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                du = x - cx
                dv = y - cy
                u = ct * du + st * dv
                v = -st * du + ct * dv
                r = sqrt((u / a) * (u / a) + (v / b) * (v / b))
                g = sqrt(u * u / (a * a * a * a) + v * v / (b * b * b * b))
                if g > 0.0:
                    sdf = (r - 1.0) * r / g
                else:
                    sdf = -(a if a < b else b)
                cov = 0.5 - sdf
                if cov <= 0.0:
                    continue
                if cov > 1.0:
                    cov = 1.0
                for c in range(3):
                    out[y, x, c] = out[y, x, c] * (1.0 - cov) + col[c] * cov


def splat_gaussians(double[:, :, ::1] out, double[:, ::1] points,
                    long[::1] channels, double sigma, double radius):
    """Max-composite truncated isotropic Gaussian dots into ``out`` in place."""
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k, x, y, x0, x1, y0, y1, ch
    cdef double px, py, d2, val, r2 = radius * radius, inv = 1.0 / (2.0 * sigma * sigma)
    for k in range(n):
        px = points[k, 0]
        py = points[k, 1]
        ch = channels[k]
        x0 = <Py_ssize_t>ceil(px - radius)
        x1 = <Py_ssize_t>floor(px + radius)
        y0 = <Py_ssize_t>ceil(py - radius)
        y1 = <Py_ssize_t>floor(py + radius)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > W - 1:
            x1 = W - 1
        if y1 > H - 1:
            y1 = H - 1
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                d2 = (x - px) * (x - px) + (y - py) * (y - py)
                if d2 > r2:
                    continue
                val = exp(-d2 * inv)
                if val > out[y, x, ch]:
                    out[y, x, ch] = val


def warp_bilinear(double[:, :, ::1] src, double[:, :, ::1] flow_px):
    """Backward bilinear sampling ``out(p) = src(p + flow(p))`` with border clamping."""
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    out_arr = np.empty((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, c, xi, yi, xj, yj
    cdef double sx, sy, wx, wy
    for y in range(H):
        for x in range(W):
            sx = x + flow_px[y, x, 0]
            sy = y + flow_px[y, x, 1]
            if sx < 0.0:
                sx = 0.0
            elif sx > W - 1:
                sx = W - 1
            if sy < 0.0:
                sy = 0.0
            elif sy > H - 1:
                sy = H - 1
            xi = <Py_ssize_t>floor(sx)
            yi = <Py_ssize_t>floor(sy)
            wx = sx - xi
            wy = sy - yi
            xj = xi + 1 if xi < W - 1 else xi
            yj = yi + 1 if yi < H - 1 else yi
            for c in range(C):
                out[y, x, c] = ((1.0 - wx) * (1.0 - wy) * src[yi, xi, c]
                                + wx * (1.0 - wy) * src[yi, xj, c]
                                + (1.0 - wx) * wy * src[yj, xi, c]
                                + wx * wy * src[yj, xj, c])
    return out_arr


def box_mean(double[:, ::1] img, Py_ssize_t win):
    """Mean over every ``win x win`` window (valid positions only)."""
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t oh = H - win + 1, ow = W - win + 1
    cdef Py_ssize_t x, y, i, j
    cdef double s, norm = 1.0 / (win * win)
    out_arr = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for y in range(oh):
        for x in range(ow):
            s = 0.0
            for i in range(win):
                for j in range(win):
                    s += img[y + i, x + j]
            out[y, x] = s * norm
    return out_arr
