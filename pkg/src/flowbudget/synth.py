"""Synthetic frame pairs with exact ground truth.

A scene is an analytic band-limited texture (a sum of random cosine waves,
evaluable at any real coordinate) moved by a global translation or affine
map, optionally with an independently moving rectangular occluder pasted on
top.  Frame 2 renders the texture at inverse-mapped coordinates; frame 1 is
then *defined* as the bilinear pullback of frame 2 through the true flow on
visible pixels, so `warp(frame2, gt) == frame1` holds to roundoff there.
Pixels whose target is covered by the occluder (or leaves the frame) get the
analytic background instead and are recorded as ground-truth occlusions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _kernels
from .core import Dataset, FlowField, Image, OcclusionMask, Sample
from .fileio import Manifest, ManifestEntry, write_flo, write_image, write_manifest


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float


@dataclass(frozen=True)
class AffineMotion:
    """Row-major 2x3 matrix mapping (x, y, 1) to target coordinates."""

    matrix: tuple[tuple[float, float, float], tuple[float, float, float]]


Motion = Union[Translate, AffineMotion]


@dataclass(frozen=True)
class Occluder:
    x: int
    y: int
    w: int
    h: int
    dx: int  # integer motion keeps the pasted patch pixel-aligned
    dy: int


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    seed: int
    motion: Motion = Translate(0.0, 0.0)
    occluder: Optional[Occluder] = None
    texture_scale: float = 1.0
    difficulty: float = 0.0
    group: str = ""
    id: str = "sample"
    channels: int = 3

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise ValueError("synthetic frames need at least 32x32 pixels")
        limit = self.width / 4.0
        if _motion_magnitude(self.motion, self.width, self.height) > limit:
            raise ValueError(f"motion magnitude exceeds width/4 = {limit}")
        if self.occluder is not None and math.hypot(self.occluder.dx, self.occluder.dy) > limit:
            raise ValueError(f"occluder motion exceeds width/4 = {limit}")


def _motion_magnitude(motion: Motion, w: int, h: int) -> float:
    if isinstance(motion, Translate):
        return math.hypot(motion.dx, motion.dy)
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    disp = _motion_targets(motion, corners[:, 0], corners[:, 1])
    dx = disp[0] - corners[:, 0]
    dy = disp[1] - corners[:, 1]
    return float(np.sqrt(dx**2 + dy**2).max())


def _motion_targets(motion: Motion, xs: np.ndarray, ys: np.ndarray):
    if isinstance(motion, Translate):
        return xs + motion.dx, ys + motion.dy
    m = np.asarray(motion.matrix, dtype=np.float64)
    return m[0, 0] * xs + m[0, 1] * ys + m[0, 2], m[1, 0] * xs + m[1, 1] * ys + m[1, 2]


def _motion_inverse(motion: Motion, xs: np.ndarray, ys: np.ndarray):
    if isinstance(motion, Translate):
        return xs - motion.dx, ys - motion.dy
    m = np.asarray(motion.matrix, dtype=np.float64)
    a = m[:, :2]
    t = m[:, 2]
    inv = np.linalg.inv(a)
    qx = xs - t[0]
    qy = ys - t[1]
    return inv[0, 0] * qx + inv[0, 1] * qy, inv[1, 0] * qx + inv[1, 1] * qy


class _WaveTexture:
    """Sum of random plane cosine waves; band-limited and analytic."""

    def __init__(self, rng: np.random.Generator, channels: int, scale: float, mean: float = 0.5,
                 amplitude: float = 0.4, n_waves: int = 24):
        self.channels = channels
        self.mean = mean
        wavelengths = np.exp(rng.uniform(np.log(6.0), np.log(28.0), (channels, n_waves))) * scale
        theta = rng.uniform(0.0, 2.0 * np.pi, (channels, n_waves))
        self.kx = 2.0 * np.pi / wavelengths * np.cos(theta)
        self.ky = 2.0 * np.pi / wavelengths * np.sin(theta)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, (channels, n_waves))
        amp = rng.uniform(0.5, 1.0, (channels, n_waves))
        self.amp = amp / amp.sum(axis=1, keepdims=True) * amplitude

    def __call__(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = np.empty(xs.shape + (self.channels,))
        for c in range(self.channels):
            acc = np.full(xs.shape, self.mean)
            for k in range(self.amp.shape[1]):
                acc += self.amp[c, k] * np.cos(self.kx[c, k] * xs + self.ky[c, k] * ys + self.phase[c, k])
            out[:, :, c] = acc
        return out


def gen_sample(spec: SynthSpec) -> tuple[Sample, OcclusionMask]:
    """Render one frame pair with exact flow label and occlusion ground truth."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x73796E74]))
    w, h = spec.width, spec.height
    bg = _WaveTexture(rng, spec.channels, spec.texture_scale)
    occ_tex = _WaveTexture(rng, spec.channels, spec.texture_scale, mean=rng.uniform(0.35, 0.65))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    tx, ty = _motion_targets(spec.motion, xs, ys)
    uv = np.stack([tx - xs, ty - ys], axis=2)
    in_r1 = np.zeros((h, w), dtype=bool)
    occ = spec.occluder
    if occ is not None:
        in_r1[occ.y : occ.y + occ.h, occ.x : occ.x + occ.w] = True
        uv[in_r1, 0] = float(occ.dx)
        uv[in_r1, 1] = float(occ.dy)
        tx = xs + uv[:, :, 0]
        ty = ys + uv[:, :, 1]

    # Frame 2: background texture at inverse-mapped coordinates, occluder on top.
    ix, iy = _motion_inverse(spec.motion, xs, ys)
    frame2 = bg(ix, iy)
    if occ is not None:
        r2 = np.zeros((h, w), dtype=bool)
        x0 = occ.x + occ.dx
        y0 = occ.y + occ.dy
        r2[max(y0, 0) : max(y0 + occ.h, 0), max(x0, 0) : max(x0 + occ.w, 0)] = True
        frame2[r2] = occ_tex(xs - occ.dx, ys - occ.dy)[r2]

    # Ground-truth occlusion: targets leaving the frame, or (for background
    # pixels) targets whose bilinear stencil touches the pasted occluder.
    oob = (tx < 0.0) | (tx > w - 1.0) | (ty < 0.0) | (ty > h - 1.0)
    occluded = oob.copy()
    if occ is not None:
        fx0 = np.floor(tx)
        fy0 = np.floor(ty)
        covered = np.zeros((h, w), dtype=bool)
        for cx, cy in ((fx0, fy0), (fx0 + 1, fy0), (fx0, fy0 + 1), (fx0 + 1, fy0 + 1)):
            covered |= (
                (cx >= occ.x + occ.dx)
                & (cx < occ.x + occ.dx + occ.w)
                & (cy >= occ.y + occ.dy)
                & (cy < occ.y + occ.dy + occ.h)
            )
        occluded |= covered & ~in_r1

    # Frame 1: bilinear pullback where visible, analytic content elsewhere.
    frame2 = np.clip(frame2, 0.0, 1.0)
    frame1, _ = _kernels.warp_bilinear(frame2, uv)
    fill = occluded & ~in_r1
    if fill.any():
        frame1[fill] = bg(xs, ys)[fill]
    if occ is not None:
        fill_occ = occluded & in_r1
        if fill_occ.any():
            frame1[fill_occ] = occ_tex(xs, ys)[fill_occ]
    frame1 = np.clip(frame1, 0.0, 1.0)

    sample = Sample(
        id=spec.id,
        frame1=Image(frame1),
        frame2=Image(frame2),
        label=FlowField(uv),
        group=spec.group or spec.id,
    )
    return sample, OcclusionMask(occluded)


def derive_seed(master_seed: int, index: int) -> int:
    """Stable per-sample seed from the master seed and sample index."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def specs_for_dataset(
    count: int,
    width: int,
    height: int,
    master_seed: int,
    difficulty_lo: float = 0.0,
    difficulty_hi: float = 1.0,
    group_size: int = 1,
    texture_scale: float = 1.0,
    use_affine: bool = False,
) -> list[SynthSpec]:
    """Build per-sample specs along a difficulty ramp.

    Difficulty maps linearly to occluder area fraction in [0, 0.3] and to
    motion magnitude in [1, 8] pixels; samples below a minimum occluder size
    get no occluder at all.
    """
    specs = []
    diffs = np.linspace(difficulty_lo, difficulty_hi, count) if count > 1 else [difficulty_lo]
    for i in range(count):
        seed = derive_seed(master_seed, i)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x73706563]))
        difficulty = float(diffs[i])
        mag = 1.0 + 7.0 * difficulty
        theta = rng.uniform(0.0, 2.0 * np.pi)
        motion: Motion = Translate(mag * math.cos(theta), mag * math.sin(theta))
        if use_affine and rng.random() < 0.5:
            ang = rng.uniform(-0.03, 0.03) * (0.5 + difficulty)
            scale = 1.0 + rng.uniform(-0.02, 0.02) * (0.5 + difficulty)
            cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
            ca, sa = scale * math.cos(ang), scale * math.sin(ang)
            candidate = AffineMotion(
                (
                    (ca, -sa, cx - ca * cx + sa * cy + mag * math.cos(theta)),
                    (sa, ca, cy - sa * cx - ca * cy + mag * math.sin(theta)),
                )
            )
            if _motion_magnitude(candidate, width, height) <= width / 4.0:
                motion = candidate
        occluder = None
        area = difficulty * 0.3 * width * height
        side = int(math.sqrt(max(area, 0.0)))
        if side >= 4:
            ow = min(side, width // 2)
            oh = min(side, height // 2)
            psi = rng.uniform(0.0, 2.0 * np.pi)
            omag = min(mag + 2.0, width / 4.0 - 1.0)
            odx = int(round(omag * math.cos(psi)))
            ody = int(round(omag * math.sin(psi)))
            margin = int(math.ceil(omag)) + 1
            x_lo, x_hi = margin, max(width - ow - margin, margin + 1)
            y_lo, y_hi = margin, max(height - oh - margin, margin + 1)
            occluder = Occluder(
                x=int(rng.integers(x_lo, x_hi)),
                y=int(rng.integers(y_lo, y_hi)),
                w=ow,
                h=oh,
                dx=odx,
                dy=ody,
            )
        specs.append(
            SynthSpec(
                width=width,
                height=height,
                seed=seed,
                motion=motion,
                occluder=occluder,
                texture_scale=texture_scale,
                difficulty=difficulty,
                group=f"g{i // group_size:04d}",
                id=f"s{i:04d}",
            )
        )
    return specs


@dataclass(frozen=True)
class SynthDataset:
    dataset: Dataset
    occlusions: dict[str, OcclusionMask]
    specs: tuple[SynthSpec, ...]


def gen_dataset(specs: list[SynthSpec]) -> SynthDataset:
    samples = []
    occlusions = {}
    for spec in specs:
        sample, occ = gen_sample(spec)
        samples.append(sample)
        occlusions[sample.id] = occ
    return SynthDataset(Dataset(tuple(samples)), occlusions, tuple(specs))


def write_dataset(result: SynthDataset, out_dir: Path) -> Manifest:
    """Write PNG frames, .flo ground truth, occlusion masks, and the manifest."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in result.dataset:
        f1 = f"frames/{sample.id}_1.png"
        f2 = f"frames/{sample.id}_2.png"
        gt = f"gt/{sample.id}.flo"
        (out / f1).write_bytes(write_image(sample.frame1))
        (out / f2).write_bytes(write_image(sample.frame2))
        (out / gt).write_bytes(write_flo(sample.label))
        occ = result.occlusions[sample.id]
        occ_img = Image(occ.occluded.astype(np.float64)[:, :, None])
        (out / "gt" / f"{sample.id}_occ.png").write_bytes(write_image(occ_img))
        entries.append(
            ManifestEntry(id=sample.id, frame1=f1, frame2=f2, gt=gt, group=sample.group)
        )
    manifest = Manifest(tuple(entries))
    (out / "manifest.json").write_bytes(write_manifest(manifest))
    return manifest
