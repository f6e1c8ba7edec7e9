"""Pure-numpy kernels; reference semantics for the compiled backend.

Every function mirrors the per-pixel arithmetic of `_native` exactly (same
expression order), so the two backends agree to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _clamped_lookup(img: np.ndarray, flow: np.ndarray):
    """Shared setup: clamped sample coordinates, corner values, weights."""
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = xs + flow[:, :, 0]
    ty = ys + flow[:, :, 1]
    oob_x = (tx < 0.0) | (tx > w - 1.0)
    oob_y = (ty < 0.0) | (ty > h - 1.0)
    cx = np.clip(tx, 0.0, w - 1.0)
    cy = np.clip(ty, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(cx), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(cy), max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = cx - x0
    wy = cy - y0
    i00 = img[y0, x0]
    i10 = img[y0, x1]
    i01 = img[y1, x0]
    i11 = img[y1, x1]
    return i00, i10, i01, i11, wx, wy, oob_x, oob_y


def warp_bilinear(img, flow):
    """Bilinear backward warp.

    Returns (warped, oob) where oob flags sample points strictly outside
    [0, w-1] x [0, h-1]; those pixels read the border-clamped value.
    """
    img = _as_f64(img)
    flow = _as_f64(flow)
    i00, i10, i01, i11, wx, wy, oob_x, oob_y = _clamped_lookup(img, flow)
    wx = wx[:, :, None]
    wy = wy[:, :, None]
    warped = (1.0 - wy) * ((1.0 - wx) * i00 + wx * i10) + wy * ((1.0 - wx) * i01 + wx * i11)
    return warped, oob_x | oob_y


def photo_charbonnier_value_grad(i1, i2, flow, active, eps):
    """Charbonnier photometric data term and its exact flow gradient.

    value = sum over active pixels and channels of sqrt(r^2 + eps^2) with
    r = i1 - bilinear(i2, p + flow(p)).  The gradient differentiates the
    bilinear interpolant itself, so it is the true derivative of `value`
    everywhere off the interpolation-cell boundaries.  No normalization.
    """
    i1 = _as_f64(i1)
    i2 = _as_f64(i2)
    flow = _as_f64(flow)
    active = np.ascontiguousarray(active, dtype=bool)
    i00, i10, i01, i11, wx, wy, oob_x, oob_y = _clamped_lookup(i2, flow)
    wxc = wx[:, :, None]
    wyc = wy[:, :, None]
    warped = (1.0 - wyc) * ((1.0 - wxc) * i00 + wxc * i10) + wyc * ((1.0 - wxc) * i01 + wxc * i11)
    r = i1 - warped
    s = np.sqrt(r * r + eps * eps)
    value = float(s.sum(axis=2)[active].sum())
    dwdx = (1.0 - wyc) * (i10 - i00) + wyc * (i11 - i01)
    dwdy = (1.0 - wxc) * (i01 - i00) + wxc * (i11 - i10)
    coeff = -r / s
    gx = (coeff * dwdx).sum(axis=2)
    gy = (coeff * dwdy).sum(axis=2)
    gx[oob_x] = 0.0
    gy[oob_y] = 0.0
    grad = np.stack([gx, gy], axis=2)
    grad[~active] = 0.0
    return value, grad


def smooth_second_value_grad(flow, wx, wy):
    """L1 norm of second differences, edge-weighted; plus its subgradient.

    value = sum over interior-in-x pixels of |d2x u| + |d2x v| times wx at
    the center pixel, plus the y-direction analog.  sign(0) = 0.  No
    normalization and no 1/2 factor; callers scale.
    """
    flow = _as_f64(flow)
    wx = _as_f64(wx)
    wy = _as_f64(wy)
    h, w = flow.shape[:2]
    grad = np.zeros_like(flow)
    value = 0.0
    if w >= 3:
        d2 = flow[:, :-2, :] - 2.0 * flow[:, 1:-1, :] + flow[:, 2:, :]
        wc = wx[:, 1:-1]
        value += float((np.abs(d2).sum(axis=2) * wc).sum())
        s = np.sign(d2) * wc[:, :, None]
        grad[:, :-2, :] += s
        grad[:, 1:-1, :] -= 2.0 * s
        grad[:, 2:, :] += s
    if h >= 3:
        d2 = flow[:-2, :, :] - 2.0 * flow[1:-1, :, :] + flow[2:, :, :]
        wc = wy[1:-1, :]
        value += float((np.abs(d2).sum(axis=2) * wc).sum())
        s = np.sign(d2) * wc[:, :, None]
        grad[:-2, :, :] += s
        grad[1:-1, :, :] -= 2.0 * s
        grad[2:, :, :] += s
    return value, grad


def robust_sup_value_grad(flow, gt, valid, eps, q):
    """Robust L1 deviation penalty (|du| + |dv| + eps)^q and its gradient.

    Summed over valid pixels, unnormalized.  sign(0) = 0.
    """
    flow = _as_f64(flow)
    gt = _as_f64(gt)
    valid = np.ascontiguousarray(valid, dtype=bool)
    d = flow - gt
    l1 = np.abs(d).sum(axis=2)
    base = l1 + eps
    value = float((base[valid] ** q).sum())
    coeff = q * base ** (q - 1.0)
    grad = coeff[:, :, None] * np.sign(d)
    grad[~valid] = 0.0
    return value, grad
