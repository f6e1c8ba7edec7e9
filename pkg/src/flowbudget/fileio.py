"""Bit-exact readers and writers for the on-disk formats.

Formats:
  - .flo          little-endian float32 flow (magic 202021.25)
  - KITTI PNG     16-bit RGB PNG, u=(R-2^15)/64, v=(G-2^15)/64, valid=(B>0)
  - images        8-bit PNG (gray/RGB) and binary PPM (P6), intensities / 255
  - manifest      JSON listing of samples

The PNG codec lives here (stdlib zlib only): the 16-bit RGB flavor KITTI
uses is not covered by the usual imaging libraries, and owning the encoder
keeps output bytes deterministic.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Dataset, FlowField, Image, Sample

FLO_MAGIC = 202021.25
FLO_INVALID = 1e10  # written for masked-out pixels; anything > 1e9 reads as invalid
KITTI_SCALE = 64.0
KITTI_OFFSET = 2**15

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class FlowIOError(ValueError):
    """Malformed or unsupported file content."""


class BadMagicError(FlowIOError):
    pass


# --------------------------------------------------------------------------
# .flo


def read_flo(data: bytes) -> FlowField:
    """Parse a Middlebury .flo byte stream."""
    if len(data) < 12:
        raise FlowIOError("flo: truncated header")
    (magic,) = struct.unpack("<f", data[0:4])
    if magic != np.float32(FLO_MAGIC):
        raise BadMagicError(f"flo: bad magic {magic!r}")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise FlowIOError(f"flo: non-positive dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise FlowIOError(f"flo: truncated payload ({len(data)} < {need} bytes)")
    uv = np.frombuffer(data[12:need], dtype="<f4").reshape(h, w, 2).astype(np.float64)
    invalid = (np.abs(uv) > 1e9).any(axis=2)
    if invalid.any():
        return FlowField(uv, valid=~invalid)
    return FlowField(uv)


def write_flo(flow: FlowField) -> bytes:
    """Serialize to .flo; masked-out pixels are stored as the invalid sentinel."""
    uv = flow.uv
    if flow.valid is not None:
        uv = uv.copy()
        uv[~flow.valid] = FLO_INVALID
    head = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    return head + uv.astype("<f4").tobytes()


# --------------------------------------------------------------------------
# PNG codec (bit depths 8/16, grayscale and RGB, no interlace)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def _encode_png(arr: np.ndarray, bit_depth: int) -> bytes:
    """Encode (h, w) or (h, w, 3) unsigned samples at the given bit depth."""
    if arr.ndim == 2:
        color_type = 0
        channels = 1
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
        channels = 3
    else:
        raise FlowIOError(f"png: unsupported array shape {arr.shape}")
    h, w = arr.shape[:2]
    dtype = ">u2" if bit_depth == 16 else np.uint8
    samples = arr.astype(dtype).tobytes()
    stride = w * channels * (bit_depth // 8)
    lines = bytearray()
    for row in range(h):
        lines.append(0)  # filter: None
        lines += samples[row * stride : (row + 1) * stride]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    return (
        _PNG_SIG
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(bytes(lines), 6))
        + _png_chunk(b"IEND", b"")
    )


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(lines: bytes, h: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(h * stride)
    pos = 0
    prev_start = None
    for row in range(h):
        ftype = lines[pos]
        pos += 1
        cur = bytearray(lines[pos : pos + stride])
        pos += stride
        start = row * stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                cur[i] = (cur[i] + cur[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            if prev_start is not None:
                for i in range(stride):
                    cur[i] = (cur[i] + out[prev_start + i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if prev_start is not None else 0
                cur[i] = (cur[i] + ((left + up) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if prev_start is not None else 0
                ul = out[prev_start + i - bpp] if (prev_start is not None and i >= bpp) else 0
                cur[i] = (cur[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise FlowIOError(f"png: unknown filter type {ftype}")
        out[start : start + stride] = cur
        prev_start = start
    return out


def _decode_png(data: bytes) -> tuple[np.ndarray, int]:
    """Decode to ((h, w) or (h, w, channels) array, bit_depth)."""
    if not data.startswith(_PNG_SIG):
        raise BadMagicError("png: bad signature")
    pos = len(_PNG_SIG)
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise FlowIOError("png: missing IHDR")
    w, h, bit_depth, color_type, _comp, _filt, interlace = ihdr
    if interlace != 0:
        raise FlowIOError("png: interlaced images unsupported")
    if bit_depth not in (8, 16) or color_type not in (0, 2):
        raise FlowIOError(f"png: unsupported bit depth {bit_depth} / color type {color_type}")
    channels = 1 if color_type == 0 else 3
    stride = w * channels * (bit_depth // 8)
    bpp = max(1, channels * (bit_depth // 8))
    raw = _unfilter(zlib.decompress(bytes(idat)), h, stride, bpp)
    dtype = ">u2" if bit_depth == 16 else np.uint8
    arr = np.frombuffer(bytes(raw), dtype=dtype).reshape(h, w, channels)
    if channels == 1:
        arr = arr[:, :, 0]
    return arr.astype(np.uint16 if bit_depth == 16 else np.uint8), bit_depth


# --------------------------------------------------------------------------
# KITTI flow PNG


def read_kitti_flow_png(data: bytes) -> FlowField:
    """Decode sparse flow from a 16-bit RGB PNG (KITTI convention)."""
    arr, bit_depth = _decode_png(data)
    if bit_depth != 16 or arr.ndim != 3:
        raise FlowIOError("kitti flow: expected a 16-bit 3-channel PNG")
    a = arr.astype(np.float64)
    u = (a[:, :, 0] - KITTI_OFFSET) / KITTI_SCALE
    v = (a[:, :, 1] - KITTI_OFFSET) / KITTI_SCALE
    valid = arr[:, :, 2] > 0
    uv = np.stack([u, v], axis=2)
    uv[~valid] = 0.0
    return FlowField(uv, valid=valid)


def write_kitti_flow_png(flow: FlowField) -> bytes:
    """Encode to the 16-bit RGB convention; components clamp to the
    representable +/-512 px range and quantize to 1/64 px."""
    valid = flow.valid_mask()
    enc = np.rint(flow.uv * KITTI_SCALE + KITTI_OFFSET)
    enc = np.clip(enc, 0, 65535).astype(np.uint16)
    rgb = np.zeros((flow.height, flow.width, 3), dtype=np.uint16)
    rgb[:, :, 0] = np.where(valid, enc[:, :, 0], KITTI_OFFSET)
    rgb[:, :, 1] = np.where(valid, enc[:, :, 1], KITTI_OFFSET)
    rgb[:, :, 2] = valid.astype(np.uint16)
    return _encode_png(rgb, 16)


# --------------------------------------------------------------------------
# Images


def read_image(data: bytes) -> Image:
    """Decode an 8-bit PNG or binary PPM; intensities are divided by 255."""
    if data.startswith(_PNG_SIG):
        arr, bit_depth = _decode_png(data)
        if bit_depth != 8:
            raise FlowIOError("image: expected 8-bit PNG")
        return Image(arr.astype(np.float64) / 255.0)
    if data.startswith(b"P6"):
        return _read_ppm(data)
    raise FlowIOError("image: unsupported format (need 8-bit PNG or P6 PPM)")


def write_image(image: Image, fmt: str = "png") -> bytes:
    """Encode with round(v * 255); exact inverse of read_image for 8-bit data."""
    arr = np.rint(image.data * 255.0).astype(np.uint8)
    if fmt == "png":
        if image.channels == 1:
            return _encode_png(arr[:, :, 0], 8)
        return _encode_png(arr, 8)
    if fmt == "ppm":
        if image.channels != 3:
            raise FlowIOError("ppm: only 3-channel images")
        header = f"P6\n{image.width} {image.height}\n255\n".encode()
        return header + arr.tobytes()
    raise FlowIOError(f"unknown image format {fmt!r}")


def _read_ppm(data: bytes) -> Image:
    tokens = []
    pos = 2  # past "P6"
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FlowIOError("ppm: only maxval 255 supported")
    need = w * h * 3
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise FlowIOError("ppm: truncated payload")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr.astype(np.float64) / 255.0)


# --------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    frame1: str
    frame2: str
    gt: Optional[str]
    group: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise FlowIOError("manifest: sample ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def read_manifest(data: bytes) -> Manifest:
    try:
        doc = json.loads(data.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FlowIOError(f"manifest: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "samples" not in doc:
        raise FlowIOError("manifest: missing 'samples' key")
    entries = []
    for row in doc["samples"]:
        unknown = set(row) - {"id", "frame1", "frame2", "gt", "group"}
        if unknown:
            raise FlowIOError(f"manifest: unknown keys {sorted(unknown)}")
        entries.append(
            ManifestEntry(
                id=row["id"],
                frame1=row["frame1"],
                frame2=row["frame2"],
                gt=row.get("gt"),
                group=row.get("group", ""),
            )
        )
    return Manifest(tuple(entries))


def write_manifest(manifest: Manifest) -> bytes:
    doc = {
        "samples": [
            {"id": e.id, "frame1": e.frame1, "frame2": e.frame2, "gt": e.gt, "group": e.group}
            for e in manifest.entries
        ]
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def load_manifest(path: Path) -> Manifest:
    """Read a manifest from disk and verify every referenced file exists."""
    path = Path(path)
    manifest = read_manifest(path.read_bytes())
    base = path.parent
    for e in manifest:
        for ref in (e.frame1, e.frame2, e.gt):
            if ref is not None and not (base / ref).exists():
                raise FlowIOError(f"manifest: missing file {ref!r} for sample {e.id!r}")
    return manifest


def read_flow_file(path: Path) -> FlowField:
    """Dispatch on extension: .flo or KITTI-convention .png."""
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".flo":
        return read_flo(data)
    if path.suffix == ".png":
        return read_kitti_flow_png(data)
    raise FlowIOError(f"unknown flow file type {path.suffix!r}")


def load_sample(entry: ManifestEntry, base_dir: Path) -> Sample:
    base = Path(base_dir)
    frame1 = read_image((base / entry.frame1).read_bytes())
    frame2 = read_image((base / entry.frame2).read_bytes())
    label = read_flow_file(base / entry.gt) if entry.gt else None
    return Sample(id=entry.id, frame1=frame1, frame2=frame2, label=label, group=entry.group)


def load_dataset(manifest: Manifest, base_dir: Path) -> Dataset:
    return Dataset(tuple(load_sample(e, base_dir) for e in manifest))
