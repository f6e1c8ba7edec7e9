"""Domain types and configuration shared by every stage of the pipeline.

All containers freeze their numpy buffers after validation, so instances can
be shared across worker threads without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

MAX_LEVEL = 6
LOSS_LEVELS = (2, 3, 4, 5, 6)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Image:
    """Dense raster of float intensities in [0, 1], shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        a = _freeze(a)
        if not np.isfinite(a).all():
            raise ValueError("image intensities must be finite")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u, v) in pixels, shape (height, width, 2).

    `valid` marks pixels that carry ground truth (sparse labels); when absent
    every pixel counts as valid.
    """

    uv: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.uv)
        if a.ndim != 3 or a.shape[2] != 2:
            raise ValueError(f"flow must be HxWx2, got shape {a.shape}")
        a = _freeze(a)
        if not np.isfinite(a).all():
            raise ValueError("flow vectors must be finite")
        object.__setattr__(self, "uv", a)
        if self.valid is not None:
            m = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
            if m.shape != a.shape[:2]:
                raise ValueError("valid mask shape must match flow dimensions")
            m.flags.writeable = False
            object.__setattr__(self, "valid", m)

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Validity as a dense boolean array (all-true when no mask is stored)."""
        if self.valid is None:
            return np.ones(self.uv.shape[:2], dtype=bool)
        return self.valid


@dataclass(frozen=True)
class OcclusionMask:
    """Per-pixel boolean map, true where the first frame has no counterpart."""

    occluded: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.occluded, dtype=bool))
        if m.ndim != 2:
            raise ValueError(f"occlusion mask must be HxW, got shape {m.shape}")
        m.flags.writeable = False
        object.__setattr__(self, "occluded", m)

    @property
    def height(self) -> int:
        return self.occluded.shape[0]

    @property
    def width(self) -> int:
        return self.occluded.shape[1]

    def ratio(self) -> float:
        return float(self.occluded.mean())


@dataclass(frozen=True)
class Sample:
    """A frame pair with an optional ground-truth flow label."""

    id: str
    frame1: Image
    frame2: Image
    label: Optional[FlowField] = None
    group: str = ""

    def __post_init__(self):
        if (self.frame1.height, self.frame1.width) != (self.frame2.height, self.frame2.width):
            raise ValueError(f"sample {self.id!r}: frames must share dimensions")
        if self.label is not None and (self.label.height, self.label.width) != (
            self.frame1.height,
            self.frame1.width,
        ):
            raise ValueError(f"sample {self.id!r}: label must share frame dimensions")

    @property
    def labeled(self) -> bool:
        return self.label is not None


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of samples with unique ids."""

    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def get(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def label_ratio(self) -> float:
        if not self.samples:
            return 0.0
        return sum(1 for s in self.samples if s.labeled) / len(self.samples)


@dataclass(frozen=True)
class Budget:
    """Fraction of the dataset allowed to carry labels."""

    ratio: float

    def __post_init__(self):
        if not (0.0 <= self.ratio <= 1.0):
            raise ValueError(f"label ratio must lie in [0, 1], got {self.ratio}")


@dataclass(frozen=True)
class LossConfig:
    """Weights and constants of the loss stack.

    Defaults are the census-phase training constants; `l1_ssim_phase` gives
    the warm-up weighting used before the census measure takes over.  The
    augmentation weight is carried for completeness but pinned to zero (no
    second transformed pass is computed here).
    """

    alpha: float = 1.0
    lambda_sm: float = 50.0
    lambda_aug: float = 0.0
    c: tuple[float, float, float] = (0.0, 0.0, 1.0)
    w_sup: tuple[float, ...] = (0.32, 0.08, 0.02, 0.01, 0.005)
    w_ph: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.0)
    w_sm: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 0.0)
    delta: float = 10.0
    eps: float = 0.01
    q: float = 0.4
    occ_alpha1: float = 0.01
    occ_alpha2: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0.0 < self.q <= 1.0):
            raise ValueError("q must lie in (0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        for name in ("c", "w_sup", "w_ph", "w_sm"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.c) != 3:
            raise ValueError("c must have 3 entries")
        for name in ("w_sup", "w_ph", "w_sm"):
            if len(getattr(self, name)) != len(LOSS_LEVELS):
                raise ValueError(f"{name} must have one weight per level 2..6")
        if any(v < 0 for v in self.c + self.w_sup + self.w_ph + self.w_sm):
            raise ValueError("weights must be non-negative")
        if self.lambda_sm < 0 or self.lambda_aug < 0:
            raise ValueError("lambda weights must be non-negative")

    @classmethod
    def census_phase(cls) -> "LossConfig":
        return cls()

    @classmethod
    def l1_ssim_phase(cls) -> "LossConfig":
        return cls(c=(0.15, 0.85, 0.0))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda_sm": self.lambda_sm,
            "lambda_aug": self.lambda_aug,
            "c": list(self.c),
            "w_sup": list(self.w_sup),
            "w_ph": list(self.w_ph),
            "w_sm": list(self.w_sm),
            "delta": self.delta,
            "eps": self.eps,
            "q": self.q,
            "occ_alpha1": self.occ_alpha1,
            "occ_alpha2": self.occ_alpha2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for name in ("c", "w_sup", "w_ph", "w_sm"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    def with_updates(self, **kwargs) -> "LossConfig":
        return replace(self, **kwargs)


def level_dims(width: int, height: int, level: int) -> tuple[int, int]:
    """Dimensions of pyramid level `level` under ceiling-halving per step."""
    if not (0 <= level <= MAX_LEVEL):
        raise ValueError(f"level must lie in 0..{MAX_LEVEL}, got {level}")
    if width < 1 or height < 1:
        raise ValueError("base dimensions must be positive")
    w, h = width, height
    for _ in range(level):
        w = math.ceil(w / 2)
        h = math.ceil(h / 2)
    return w, h


def pixel_domain(width: int, height: int, level: int) -> np.ndarray:
    """All (x, y) coordinates of pyramid level `level`, row-major, shape (n, 2)."""
    wl, hl = level_dims(width, height, level)
    ys, xs = np.mgrid[0:hl, 0:wl]
    return np.stack([xs.ravel(), ys.ravel()], axis=1)
