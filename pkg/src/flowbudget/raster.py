"""Image-space primitives: sampling, warping, pyramids, gradients, census,
SSIM, structure tensor, and color histograms.

All operations are pure functions over immutable `Image` values.  Sampling
clamps to the border; census and SSIM statistics are only computed where a
full 3x3 neighborhood exists (census leaves the border ring zero, SSIM
replicates the nearest interior value into the ring).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import MAX_LEVEL, Image

CENSUS_NEIGHBORS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class ImagePyramid:
    """Repeated 2x mean-pooled copies of a base image, indexed by level."""

    levels: tuple[Image, ...]

    def __getitem__(self, level: int) -> Image:
        return self.levels[level]

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1


def bilinear_sample(img: Image, x: float, y: float) -> tuple[np.ndarray, bool]:
    """Sample at a real-valued coordinate; returns (per-channel value, oob flag).

    Out-of-bounds coordinates clamp to the border and set the flag.
    """
    h, w = img.height, img.width
    oob = not (0.0 <= x <= w - 1.0 and 0.0 <= y <= h - 1.0)
    cx = min(max(float(x), 0.0), float(w - 1))
    cy = min(max(float(y), 0.0), float(h - 1))
    x0 = min(int(np.floor(cx)), max(w - 2, 0))
    y0 = min(int(np.floor(cy)), max(h - 2, 0))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    wx = cx - x0
    wy = cy - y0
    d = img.data
    top = (1.0 - wx) * d[y0, x0] + wx * d[y0, x1]
    bot = (1.0 - wx) * d[y1, x0] + wx * d[y1, x1]
    return (1.0 - wy) * top + wy * bot, oob


def warp_image(target: Image, flow) -> tuple[Image, np.ndarray]:
    """Backward-warp `target` through `flow`: out(p) = target(p + flow(p)).

    Returns the warped image and a boolean map flagging pixels whose sample
    point fell outside [0, w-1] x [0, h-1] (those read the clamped border).
    """
    uv = flow.uv if hasattr(flow, "uv") else np.asarray(flow, dtype=np.float64)
    if uv.shape[:2] != (target.height, target.width):
        raise ValueError("flow dimensions must match the image")
    warped, oob = _kernels.warp_bilinear(target.data, uv)
    return Image(np.clip(warped, 0.0, 1.0)), oob


def downsample2(img: Image) -> Image:
    """2x2 mean pooling with ceiling dimensions; edge cells average what exists."""
    return Image(_pool2(img.data))


def _pool2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[:2]
    ridx = np.arange(0, h, 2)
    cidx = np.arange(0, w, 2)
    s = np.add.reduceat(np.add.reduceat(a, ridx, axis=0), cidx, axis=1)
    rcount = np.minimum(ridx + 2, h) - ridx
    ccount = np.minimum(cidx + 2, w) - cidx
    counts = rcount[:, None] * ccount[None, :]
    return s / counts[:, :, None]


def build_image_pyramid(img: Image, max_level: int = MAX_LEVEL) -> ImagePyramid:
    levels = [img]
    for _ in range(max_level):
        levels.append(downsample2(levels[-1]))
    return ImagePyramid(tuple(levels))


def _grad_axis(a: np.ndarray, axis: int) -> np.ndarray:
    if a.shape[axis] < 2:
        return np.zeros_like(a)
    return np.gradient(a, axis=axis)


def image_gradient(img: Image) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (d/dx, d/dy): central differences inside, one-sided at borders."""
    gx = _grad_axis(img.data, 1)
    gy = _grad_axis(img.data, 0)
    return gx, gy


def _grayscale(img: Image) -> np.ndarray:
    return img.data.mean(axis=2)


def census_transform(img: Image) -> np.ndarray:
    """Soft ternary census signature, shape (h, w, 8), on the channel mean.

    Component k compares the pixel with its k-th 3x3 neighbor through the
    bounded soft sign d / sqrt(0.81 + d^2).  The border ring, which lacks a
    full neighborhood, stays zero and is excluded from downstream distances.
    """
    g = _grayscale(img)
    h, w = g.shape
    out = np.zeros((h, w, 8))
    if h < 3 or w < 3:
        return out
    center = g[1:-1, 1:-1]
    for k, (dy, dx) in enumerate(CENSUS_NEIGHBORS):
        d = g[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx] - center
        out[1:-1, 1:-1, k] = d / np.sqrt(0.81 + d * d)
    return out


def census_distance_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel soft hamming distance between two census signatures."""
    t = a - b
    return (t * t / (0.1 + t * t)).sum(axis=2)


def _box3(a: np.ndarray) -> np.ndarray:
    # Mean over full 3x3 windows; output has interior shape (h-2, w-2).
    s = (
        a[:-2, :-2] + a[:-2, 1:-1] + a[:-2, 2:]
        + a[1:-1, :-2] + a[1:-1, 1:-1] + a[1:-1, 2:]
        + a[2:, :-2] + a[2:, 1:-1] + a[2:, 2:]
    )
    return s / 9.0


def ssim_map(a: Image, b: Image) -> np.ndarray:
    """Per-pixel SSIM (channel mean), 3x3 box statistics, C1=0.01^2 C2=0.03^2.

    Values live in [-1, 1].  Statistics exist only where a full window fits;
    the 1-pixel border replicates the nearest interior value.
    """
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise ValueError("ssim_map requires equal image shapes")
    h, w = a.height, a.width
    if h < 3 or w < 3:
        return np.ones((h, w))
    acc = np.zeros((h - 2, w - 2))
    for c in range(a.channels):
        x = a.data[:, :, c]
        y = b.data[:, :, c]
        mx = _box3(x)
        my = _box3(y)
        vx = _box3(x * x) - mx * mx
        vy = _box3(y * y) - my * my
        cxy = _box3(x * y) - mx * my
        num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        acc += num / den
    interior = acc / a.channels
    return np.pad(interior, 1, mode="edge")


def structure_tensor_min_eig(img: Image, window: int = 16, stride: int = 8) -> float:
    """Mean over windows of the smaller eigenvalue of the summed gradient
    outer products (the classic corner-strength score)."""
    g = _grayscale(img)
    gx = _grad_axis(g, 1)
    gy = _grad_axis(g, 0)
    h, w = g.shape
    win_w = min(window, w)
    win_h = min(window, h)
    xs = list(range(0, w - win_w + 1, stride)) or [0]
    ys = list(range(0, h - win_h + 1, stride)) or [0]
    eigs = []
    for y0 in ys:
        for x0 in xs:
            sx = gx[y0 : y0 + win_h, x0 : x0 + win_w]
            sy = gy[y0 : y0 + win_h, x0 : x0 + win_w]
            sxx = float((sx * sx).sum())
            syy = float((sy * sy).sum())
            sxy = float((sx * sy).sum())
            tr = sxx + syy
            disc = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy)
            eigs.append(0.5 * (tr - disc))
    return float(np.mean(eigs))


def histogram_cdf_distance(a: Image, b: Image) -> float:
    """Mean absolute gap between per-channel 256-bin intensity CDFs."""
    if a.channels != b.channels:
        raise ValueError("histogram distance requires equal channel counts")
    dists = []
    for c in range(a.channels):
        ha, _ = np.histogram(a.data[:, :, c], bins=256, range=(0.0, 1.0))
        hb, _ = np.histogram(b.data[:, :, c], bins=256, range=(0.0, 1.0))
        cdfa = np.cumsum(ha) / ha.sum()
        cdfb = np.cumsum(hb) / hb.sum()
        dists.append(float(np.abs(cdfa - cdfb).mean()))
    return float(np.mean(dists))
