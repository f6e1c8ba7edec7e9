"""Flow-space primitives: pyramids, cross-warping, forward-backward occlusion
estimation, and flow-gradient statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import LOSS_LEVELS, FlowField, LossConfig, OcclusionMask


@dataclass(frozen=True)
class FlowPyramid:
    """Flow fields for levels 2..6; level-l vectors are scaled by 2^-l."""

    levels: tuple[FlowField, ...]

    def __post_init__(self):
        if len(self.levels) != len(LOSS_LEVELS):
            raise ValueError("flow pyramid must hold levels 2..6")

    def level(self, level: int) -> FlowField:
        return self.levels[level - LOSS_LEVELS[0]]


def downsample_flow(flow: FlowField) -> FlowField:
    """Halve resolution: 2x2 mean pooling of vectors, then scale them by 0.5.

    With a sparse validity mask, cell means use valid members only and the
    pooled pixel stays valid when at least half of its members were valid.
    """
    uv = flow.uv
    h, w = uv.shape[:2]
    ridx = np.arange(0, h, 2)
    cidx = np.arange(0, w, 2)
    if flow.valid is None:
        s = np.add.reduceat(np.add.reduceat(uv, ridx, axis=0), cidx, axis=1)
        rcount = np.minimum(ridx + 2, h) - ridx
        ccount = np.minimum(cidx + 2, w) - cidx
        counts = (rcount[:, None] * ccount[None, :]).astype(np.float64)
        return FlowField(0.5 * s / counts[:, :, None])
    vf = flow.valid.astype(np.float64)
    masked = uv * vf[:, :, None]
    s = np.add.reduceat(np.add.reduceat(masked, ridx, axis=0), cidx, axis=1)
    vsum = np.add.reduceat(np.add.reduceat(vf, ridx, axis=0), cidx, axis=1)
    rcount = np.minimum(ridx + 2, h) - ridx
    ccount = np.minimum(cidx + 2, w) - cidx
    cell = (rcount[:, None] * ccount[None, :]).astype(np.float64)
    pooled = np.zeros_like(s)
    np.divide(0.5 * s, vsum[:, :, None], out=pooled, where=vsum[:, :, None] > 0)
    return FlowField(pooled, valid=vsum / cell >= 0.5)


def upsample_flow2(flow: FlowField) -> FlowField:
    """Double resolution with bilinear interpolation and scale vectors by 2."""
    uv = flow.uv
    h, w = uv.shape[:2]
    xs = (np.arange(2 * w) + 0.5) / 2.0 - 0.5
    ys = (np.arange(2 * h) + 0.5) / 2.0 - 0.5
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(cx), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(cy), max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (cx - x0)[None, :, None]
    wy = (cy - y0)[:, None, None]
    top = (1.0 - wx) * uv[y0][:, x0] + wx * uv[y0][:, x1]
    bot = (1.0 - wx) * uv[y1][:, x0] + wx * uv[y1][:, x1]
    return FlowField(2.0 * ((1.0 - wy) * top + wy * bot))


def build_flow_pyramid(flow: FlowField) -> FlowPyramid:
    """Pool a base-resolution field down to the loss levels 2..6."""
    f = flow
    for _ in range(LOSS_LEVELS[0]):
        f = downsample_flow(f)
    levels = [f]
    for _ in LOSS_LEVELS[1:]:
        levels.append(downsample_flow(levels[-1]))
    return FlowPyramid(tuple(levels))


def fb_occlusion(forward: FlowField, backward: FlowField, cfg: LossConfig | None = None) -> OcclusionMask:
    """Forward-backward consistency check.

    A pixel is occluded when its forward target leaves the frame or when
    ||f + b~||^2 > a1 (||f||^2 + ||b~||^2) + a2, with b~ the backward field
    sampled at the forward target.
    """
    cfg = cfg or LossConfig()
    return _fb_occlusion_raw(forward, backward, cfg.occ_alpha1, cfg.occ_alpha2)


def _fb_occlusion_raw(forward: FlowField, backward: FlowField, alpha1: float, alpha2: float) -> OcclusionMask:
    if (forward.height, forward.width) != (backward.height, backward.width):
        raise ValueError("forward/backward dimensions must match")
    f = forward.uv
    bw, oob = _kernels.warp_bilinear(backward.uv, f)
    sq_sum = ((f + bw) ** 2).sum(axis=2)
    sq_f = (f**2).sum(axis=2)
    sq_b = (bw**2).sum(axis=2)
    inconsistent = sq_sum > alpha1 * (sq_f + sq_b) + alpha2
    return OcclusionMask(oob | inconsistent)


def _grad_axis(a: np.ndarray, axis: int) -> np.ndarray:
    if a.shape[axis] < 2:
        return np.zeros_like(a)
    return np.gradient(a, axis=axis)


def flow_gradient_magnitude(flow: FlowField) -> float:
    """Mean Frobenius norm of the flow Jacobian (central differences)."""
    u = flow.uv[:, :, 0]
    v = flow.uv[:, :, 1]
    ux = _grad_axis(u, 1)
    uy = _grad_axis(u, 0)
    vx = _grad_axis(v, 1)
    vy = _grad_axis(v, 0)
    return float(np.sqrt(ux**2 + uy**2 + vx**2 + vy**2).mean())
