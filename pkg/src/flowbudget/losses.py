"""The training loss stack.

Per-sample losses combine an occlusion-aware photometric term (L1 / SSIM /
census mixture), an edge-aware second-order smoothness term, and a robust L1
deviation penalty against ground truth, evaluated over pyramid levels 2..6
and mixed by the per-level weights in `LossConfig`.  Labeled samples are
charged only the (balanced) supervised term; unlabeled samples only the
unsupervised terms.

Every distance is normalized to a per-pixel mean over the pixels that
actually contribute (unmasked, and for census/SSIM statistics: interior), so
values stay comparable across pyramid levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels, raster
from .core import LOSS_LEVELS, Dataset, FlowField, Image, LossConfig, OcclusionMask, Sample
from .flowops import FlowPyramid, build_flow_pyramid, downsample_flow, fb_occlusion
from .raster import ImagePyramid, build_image_pyramid


@dataclass(frozen=True)
class SampleEstimate:
    """Forward and backward flow estimates for one sample, base resolution."""

    forward: FlowField
    backward: FlowField


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted term totals plus the unweighted per-level values (levels
    2..6; levels whose mixing weight is zero are not computed and read 0)."""

    photometric: float
    smoothness: float
    supervised: float
    total: float
    per_level_photometric: tuple[float, ...]
    per_level_smoothness: tuple[float, ...]
    per_level_supervised: tuple[float, ...]


def photometric_level(
    i1: Image, i2: Image, flow: FlowField, occ: OcclusionMask, cfg: LossConfig
) -> float:
    """Occlusion-aware photometric distance at one level.

    Warps `i2` through `flow` and mixes three measures with the weights in
    `cfg.c`: mean absolute difference, mean (1 - SSIM) / 2, and the mean
    census soft-hamming distance.  Occluded pixels are excluded; if every
    pixel is occluded the value is 0.
    """
    if (i1.height, i1.width) != (i2.height, i2.width) or (flow.height, flow.width) != (
        i1.height,
        i1.width,
    ):
        raise ValueError("photometric_level: image and flow dimensions must match")
    if (occ.height, occ.width) != (i1.height, i1.width):
        raise ValueError("photometric_level: occlusion mask dimensions must match")
    keep = ~occ.occluded
    n_keep = int(keep.sum())
    if n_keep == 0:
        return 0.0
    c1, c2, c3 = cfg.c
    warped_arr, _ = _kernels.warp_bilinear(i2.data, flow.uv)
    total = 0.0
    if c1 > 0.0:
        l1 = np.abs(i1.data - warped_arr).mean(axis=2)
        total += c1 * float(l1[keep].sum() / n_keep)
    if c2 > 0.0 or c3 > 0.0:
        warped = Image(np.clip(warped_arr, 0.0, 1.0))
        if c2 > 0.0:
            ssim = raster.ssim_map(warped, i1)
            total += c2 * float(((1.0 - ssim[keep]) / 2.0).sum() / n_keep)
        if c3 > 0.0:
            dist = raster.census_distance_map(
                raster.census_transform(warped), raster.census_transform(i1)
            )
            interior = np.zeros_like(keep)
            if i1.height >= 3 and i1.width >= 3:
                interior[1:-1, 1:-1] = True
            sel = keep & interior
            n_int = int(sel.sum())
            if n_int > 0:
                total += c3 * float(dist[sel].sum() / n_int)
    return total


def _photometric_levels(
    pyr1: ImagePyramid,
    pyr2: ImagePyramid,
    flow_pyr: FlowPyramid,
    occ_levels: Sequence[OcclusionMask],
    cfg: LossConfig,
) -> list[float]:
    vals = []
    for i, level in enumerate(LOSS_LEVELS):
        if cfg.w_ph[i] == 0.0:
            vals.append(0.0)
            continue
        vals.append(photometric_level(pyr1[level], pyr2[level], flow_pyr.level(level), occ_levels[i], cfg))
    return vals


def photometric_loss(
    pyr1: ImagePyramid,
    pyr2: ImagePyramid,
    flow_pyr: FlowPyramid,
    occ_levels: Sequence[OcclusionMask],
    cfg: LossConfig,
) -> float:
    """Linear combination over levels 2..6 with the w_ph weights."""
    vals = _photometric_levels(pyr1, pyr2, flow_pyr, occ_levels, cfg)
    return float(sum(w * v for w, v in zip(cfg.w_ph, vals)))


def smoothness_level(flow: FlowField, i1: Image, cfg: LossConfig) -> float:
    """Edge-weighted L1 of flow second differences at one level.

    Second differences are skipped at the 1-pixel border of their axis; the
    per-axis edge weight is exp(-delta * sum of channel |gradient|) of the
    image at that pixel.  Normalized by twice the full pixel count.
    """
    if (flow.height, flow.width) != (i1.height, i1.width):
        raise ValueError("smoothness_level: image and flow dimensions must match")
    gx, gy = raster.image_gradient(i1)
    wx = np.exp(-cfg.delta * np.abs(gx).sum(axis=2))
    wy = np.exp(-cfg.delta * np.abs(gy).sum(axis=2))
    value, _ = _kernels.smooth_second_value_grad(flow.uv, wx, wy)
    return float(value / (2.0 * flow.width * flow.height))


def _smoothness_levels(
    flow_pyr: FlowPyramid, image_pyr: ImagePyramid, cfg: LossConfig
) -> list[float]:
    vals = []
    for i, level in enumerate(LOSS_LEVELS):
        if cfg.w_sm[i] == 0.0:
            vals.append(0.0)
            continue
        vals.append(smoothness_level(flow_pyr.level(level), image_pyr[level], cfg))
    return vals


def smoothness_loss(flow_pyr: FlowPyramid, image_pyr: ImagePyramid, cfg: LossConfig) -> float:
    vals = _smoothness_levels(flow_pyr, image_pyr, cfg)
    return float(sum(w * v for w, v in zip(cfg.w_sm, vals)))


def occlusion_pyramid(
    fwd_pyr: FlowPyramid, bwd_pyr: FlowPyramid, cfg: LossConfig
) -> tuple[OcclusionMask, ...]:
    """Forward-direction occlusion masks for levels 2..6."""
    return tuple(
        fb_occlusion(fwd_pyr.level(level), bwd_pyr.level(level), cfg) for level in LOSS_LEVELS
    )


def _supervised_levels(
    flow_pyr: FlowPyramid, gt: FlowField, cfg: LossConfig
) -> list[float]:
    vals = []
    gt_l = gt
    for _ in range(LOSS_LEVELS[0]):
        gt_l = downsample_flow(gt_l)
    for level in LOSS_LEVELS:
        est = flow_pyr.level(level)
        mask = gt_l.valid_mask()
        n = int(mask.sum())
        if n == 0:
            vals.append(0.0)
        else:
            l1 = np.abs(est.uv - gt_l.uv).sum(axis=2)
            vals.append(float(((l1[mask] + cfg.eps) ** cfg.q).sum() / n))
        if level != LOSS_LEVELS[-1]:
            gt_l = downsample_flow(gt_l)
    return vals


def supervised_loss(
    flow_pyr: FlowPyramid, gt: FlowField, cfg: LossConfig, valid: Optional[np.ndarray] = None
) -> float:
    """Multi-scale robust deviation from ground truth: per level, the mean
    over valid pixels of (|du| + |dv| + eps)^q, mixed by w_sup.

    Ground truth (and its validity mask) is pooled down to each level; a
    pooled pixel stays valid when at least half its members were valid.
    """
    if valid is not None:
        gt = FlowField(gt.uv, valid=valid)
    vals = _supervised_levels(flow_pyr, gt, cfg)
    return float(sum(w * v for w, v in zip(cfg.w_sup, vals)))


def unsupervised_loss(
    sample: Sample,
    fwd_pyr: FlowPyramid,
    bwd_pyr: FlowPyramid,
    occ_fwd: Sequence[OcclusionMask],
    occ_bwd: Sequence[OcclusionMask],
    cfg: LossConfig,
) -> LossBreakdown:
    """Bidirectional photometric + smoothness combination.

    Forward and backward contributions are averaged; the augmentation weight
    is carried but its term is pinned to zero.
    """
    pyr1 = build_image_pyramid(sample.frame1)
    pyr2 = build_image_pyramid(sample.frame2)
    ph_f = _photometric_levels(pyr1, pyr2, fwd_pyr, occ_fwd, cfg)
    ph_b = _photometric_levels(pyr2, pyr1, bwd_pyr, occ_bwd, cfg)
    sm_f = _smoothness_levels(fwd_pyr, pyr1, cfg)
    sm_b = _smoothness_levels(bwd_pyr, pyr2, cfg)
    per_ph = tuple((f + b) / 2.0 for f, b in zip(ph_f, ph_b))
    per_sm = tuple((f + b) / 2.0 for f, b in zip(sm_f, sm_b))
    photometric = float(sum(w * v for w, v in zip(cfg.w_ph, per_ph)))
    smoothness = float(sum(w * v for w, v in zip(cfg.w_sm, per_sm)))
    total = photometric + cfg.lambda_sm * smoothness + cfg.lambda_aug * 0.0
    return LossBreakdown(
        photometric=photometric,
        smoothness=smoothness,
        supervised=0.0,
        total=total,
        per_level_photometric=per_ph,
        per_level_smoothness=per_sm,
        per_level_supervised=(0.0,) * len(LOSS_LEVELS),
    )


def sample_breakdown(sample: Sample, est: SampleEstimate, cfg: LossConfig) -> LossBreakdown:
    """Full per-sample loss: the unsupervised combination when unlabeled,
    alpha times the supervised term when labeled (no mixing of the two)."""
    fwd_pyr = build_flow_pyramid(est.forward)
    if sample.label is None:
        bwd_pyr = build_flow_pyramid(est.backward)
        occ_f = occlusion_pyramid(fwd_pyr, bwd_pyr, cfg)
        occ_b = occlusion_pyramid(bwd_pyr, fwd_pyr, cfg)
        return unsupervised_loss(sample, fwd_pyr, bwd_pyr, occ_f, occ_b, cfg)
    per_sup = tuple(_supervised_levels(fwd_pyr, sample.label, cfg))
    sup = float(sum(w * v for w, v in zip(cfg.w_sup, per_sup)))
    return LossBreakdown(
        photometric=0.0,
        smoothness=0.0,
        supervised=sup,
        total=cfg.alpha * sup,
        per_level_photometric=(0.0,) * len(LOSS_LEVELS),
        per_level_smoothness=(0.0,) * len(LOSS_LEVELS),
        per_level_supervised=per_sup,
    )


def semi_supervised_sample_loss(sample: Sample, est: SampleEstimate, cfg: LossConfig) -> float:
    return sample_breakdown(sample, est, cfg).total


def dataset_loss(dataset: Dataset, estimates: Mapping[str, SampleEstimate], cfg: LossConfig) -> float:
    """Sum of per-sample losses; kept as (unlabeled sum) + (labeled sum) so
    the split into unlabeled and labeled subsets is exact, not just close."""
    unsup = 0.0
    sup = 0.0
    for s in dataset:
        value = semi_supervised_sample_loss(s, estimates[s.id], cfg)
        if s.label is None:
            unsup += value
        else:
            sup += value
    return unsup + sup
