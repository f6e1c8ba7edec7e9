# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops of the flow optimizer.

Semantics (per-pixel expression order included) mirror `_numpy`; only the
reduction order of scalar accumulators differs, by float roundoff.
"""

import numpy as np

from libc.math cimport fabs, floor, pow, sqrt


cdef inline double _sign(double v) nogil:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


def warp_bilinear(img, flow):
    """Bilinear backward warp; returns (warped, oob bool map)."""
    cdef const double[:, :, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[:, :, ::1] fl = np.ascontiguousarray(flow, dtype=np.float64)
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1], c = im.shape[2]
    warped_arr = np.empty((h, w, c), dtype=np.float64)
    oob_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, :, ::1] out = warped_arr
    cdef unsigned char[:, ::1] oob = oob_arr
    cdef Py_ssize_t x, y, k, x0, y0, x1, y1, xcap, ycap
    cdef double tx, ty, cx, cy, wx, wy
    cdef bint bx, by
    xcap = w - 2 if w >= 2 else 0
    ycap = h - 2 if h >= 2 else 0
    with nogil:
        for y in range(h):
            for x in range(w):
                tx = x + fl[y, x, 0]
                ty = y + fl[y, x, 1]
                bx = tx < 0.0 or tx > w - 1.0
                by = ty < 0.0 or ty > h - 1.0
                if bx or by:
                    oob[y, x] = 1
                cx = tx
                if cx < 0.0:
                    cx = 0.0
                elif cx > w - 1.0:
                    cx = w - 1.0
                cy = ty
                if cy < 0.0:
                    cy = 0.0
                elif cy > h - 1.0:
                    cy = h - 1.0
                x0 = <Py_ssize_t>floor(cx)
                if x0 > xcap:
                    x0 = xcap
                y0 = <Py_ssize_t>floor(cy)
                if y0 > ycap:
                    y0 = ycap
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                wx = cx - x0
                wy = cy - y0
                for k in range(c):
                    out[y, x, k] = (1.0 - wy) * ((1.0 - wx) * im[y0, x0, k] + wx * im[y0, x1, k]) \
                        + wy * ((1.0 - wx) * im[y1, x0, k] + wx * im[y1, x1, k])
    return warped_arr, oob_arr.astype(bool)


def photo_charbonnier_value_grad(i1, i2, flow, active, eps):
    """Charbonnier photometric term over active pixels and its exact gradient."""
    cdef const double[:, :, ::1] a1 = np.ascontiguousarray(i1, dtype=np.float64)
    cdef const double[:, :, ::1] a2 = np.ascontiguousarray(i2, dtype=np.float64)
    cdef const double[:, :, ::1] fl = np.ascontiguousarray(flow, dtype=np.float64)
    cdef const unsigned char[:, ::1] act = np.ascontiguousarray(active, dtype=np.uint8)
    cdef double e = eps
    cdef Py_ssize_t h = a1.shape[0], w = a1.shape[1], c = a1.shape[2]
    grad_arr = np.zeros((h, w, 2), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t x, y, k, x0, y0, x1, y1, xcap, ycap
    cdef double tx, ty, cx, cy, wx, wy, i00, i10, i01, i11, wv, r, s, coeff
    cdef double gx, gy, value = 0.0
    cdef bint bx, by
    xcap = w - 2 if w >= 2 else 0
    ycap = h - 2 if h >= 2 else 0
    with nogil:
        for y in range(h):
            for x in range(w):
                if not act[y, x]:
                    continue
                tx = x + fl[y, x, 0]
                ty = y + fl[y, x, 1]
                bx = tx < 0.0 or tx > w - 1.0
                by = ty < 0.0 or ty > h - 1.0
                cx = tx
                if cx < 0.0:
                    cx = 0.0
                elif cx > w - 1.0:
                    cx = w - 1.0
                cy = ty
                if cy < 0.0:
                    cy = 0.0
                elif cy > h - 1.0:
                    cy = h - 1.0
                x0 = <Py_ssize_t>floor(cx)
                if x0 > xcap:
                    x0 = xcap
                y0 = <Py_ssize_t>floor(cy)
                if y0 > ycap:
                    y0 = ycap
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                wx = cx - x0
                wy = cy - y0
                gx = 0.0
                gy = 0.0
                for k in range(c):
                    i00 = a2[y0, x0, k]
                    i10 = a2[y0, x1, k]
                    i01 = a2[y1, x0, k]
                    i11 = a2[y1, x1, k]
                    wv = (1.0 - wy) * ((1.0 - wx) * i00 + wx * i10) \
                        + wy * ((1.0 - wx) * i01 + wx * i11)
                    r = a1[y, x, k] - wv
                    s = sqrt(r * r + e * e)
                    value += s
                    coeff = -r / s
                    gx += coeff * ((1.0 - wy) * (i10 - i00) + wy * (i11 - i01))
                    gy += coeff * ((1.0 - wx) * (i01 - i00) + wx * (i11 - i10))
                if bx:
                    gx = 0.0
                if by:
                    gy = 0.0
                grad[y, x, 0] = gx
                grad[y, x, 1] = gy
    return value, grad_arr


def smooth_second_value_grad(flow, wx, wy):
    """Edge-weighted L1 of flow second differences plus its subgradient."""
    cdef const double[:, :, ::1] fl = np.ascontiguousarray(flow, dtype=np.float64)
    cdef const double[:, ::1] ewx = np.ascontiguousarray(wx, dtype=np.float64)
    cdef const double[:, ::1] ewy = np.ascontiguousarray(wy, dtype=np.float64)
    cdef Py_ssize_t h = fl.shape[0], w = fl.shape[1]
    grad_arr = np.zeros((h, w, 2), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t x, y, k
    cdef double d2, s, wc, value = 0.0
    with nogil:
        if w >= 3:
            for y in range(h):
                for x in range(1, w - 1):
                    wc = ewx[y, x]
                    for k in range(2):
                        d2 = fl[y, x - 1, k] - 2.0 * fl[y, x, k] + fl[y, x + 1, k]
                        value += fabs(d2) * wc
                        s = _sign(d2) * wc
                        grad[y, x - 1, k] += s
                        grad[y, x, k] -= 2.0 * s
                        grad[y, x + 1, k] += s
        if h >= 3:
            for y in range(1, h - 1):
                for x in range(w):
                    wc = ewy[y, x]
                    for k in range(2):
                        d2 = fl[y - 1, x, k] - 2.0 * fl[y, x, k] + fl[y + 1, x, k]
                        value += fabs(d2) * wc
                        s = _sign(d2) * wc
                        grad[y - 1, x, k] += s
                        grad[y, x, k] -= 2.0 * s
                        grad[y + 1, x, k] += s
    return value, grad_arr


def robust_sup_value_grad(flow, gt, valid, eps, q):
    """Robust L1 deviation penalty (|du| + |dv| + eps)^q and its gradient."""
    cdef const double[:, :, ::1] fl = np.ascontiguousarray(flow, dtype=np.float64)
    cdef const double[:, :, ::1] g = np.ascontiguousarray(gt, dtype=np.float64)
    cdef const unsigned char[:, ::1] va = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef double e = eps, qq = q
    cdef Py_ssize_t h = fl.shape[0], w = fl.shape[1]
    grad_arr = np.zeros((h, w, 2), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t x, y
    cdef double du, dv, base, coeff, value = 0.0
    with nogil:
        for y in range(h):
            for x in range(w):
                if not va[y, x]:
                    continue
                du = fl[y, x, 0] - g[y, x, 0]
                dv = fl[y, x, 1] - g[y, x, 1]
                base = fabs(du) + fabs(dv) + e
                value += pow(base, qq)
                coeff = qq * pow(base, qq - 1.0)
                grad[y, x, 0] = coeff * _sign(du)
                grad[y, x, 1] = coeff * _sign(dv)
    return value, grad_arr
