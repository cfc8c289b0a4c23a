"""Image decoding and dense SIFT-like local descriptors.

The extractor places square patches on a regular grid, builds a 4x4 spatial
by 8 orientation gradient histogram per patch and applies the usual SIFT
post-processing (L2 normalize, clamp at 0.2, renormalize). Descriptors can
also be imported from an external tool through the ``BOFD`` file format.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    ImageTooSmall,
    MalformedDescriptorFile,
    MalformedImage,
)

DIM = 128
SPATIAL_BINS = 4
ORIENTATION_BINS = 8
CLAMP = 0.2
MIN_SIDE = 16

LUMA = (0.299, 0.587, 0.114)

DESCRIPTOR_MAGIC = b"BOFD"
DESCRIPTOR_VERSION = 1
_HEADER = struct.Struct("<4sHHI")
_RECORD = struct.Struct("<4f128f")


@dataclass(frozen=True)
class Image:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) float64 in [0, 1]

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width):
            raise MalformedImage(
                f"pixel array {self.pixels.shape} does not match {self.height}x{self.width}"
            )


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float


@dataclass
class DescriptorSet:
    image_id: object = None
    keypoints: list[Keypoint] = field(default_factory=list)
    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, DIM)))
    dim: int = DIM

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, self.dim)
        if len(self.keypoints) != len(self.vectors):
            raise DimensionMismatch(
                f"{len(self.keypoints)} keypoints but {len(self.vectors)} vectors"
            )

    def __len__(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True)
class ExtractorParams:
    grid_step: int = 8
    patch_size: int = 16


# ---------------------------------------------------------------------------
# PGM / PPM decoding
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 2
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise MalformedImage("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def decode_image(data: bytes) -> Image:
    """Decode a PGM (P2/P5) or PPM (P3/P6) file to normalized grayscale."""
    data = bytes(data)
    magic = data[:2]
    if magic not in (b"P2", b"P5", b"P3", b"P6"):
        raise MalformedImage(f"unsupported magic {magic!r}")
    tokens, pos = _header_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedImage("non-numeric header field") from exc
    if width < 1 or height < 1:
        raise MalformedImage(f"bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedImage(f"maxval {maxval} outside [1, 65535]")
    channels = 3 if magic in (b"P3", b"P6") else 1
    n = width * height * channels

    if magic in (b"P5", b"P6"):
        # exactly one whitespace byte separates header and raster
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise MalformedImage("truncated header")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise MalformedImage("truncated raster")
        samples = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        fields = data[pos:].split()
        if len(fields) < n:
            raise MalformedImage("truncated raster")
        try:
            samples = np.array([int(f) for f in fields[:n]], dtype=np.float64)
        except ValueError as exc:
            raise MalformedImage("non-numeric sample") from exc

    if samples.size and samples.max() > maxval:
        raise MalformedImage("sample exceeds maxval")
    samples = samples / maxval
    if channels == 3:
        rgb = samples.reshape(height, width, 3)
        gray = LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]
        gray = np.clip(gray, 0.0, 1.0)
    else:
        gray = samples.reshape(height, width)
    return Image(width, height, gray)


def encode_pgm(img: Image | np.ndarray) -> bytes:
    """Write an 8-bit binary PGM (P5)."""
    pixels = img.pixels if isinstance(img, Image) else np.asarray(img)
    h, w = pixels.shape
    raster = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes()


# ---------------------------------------------------------------------------
# Dense descriptor extraction
# ---------------------------------------------------------------------------


def grid_origins(length: int, patch_size: int, grid_step: int) -> np.ndarray:
    count = (length - patch_size) // grid_step + 1
    return np.arange(count) * grid_step


def image_gradients(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated edges."""
    padded = np.pad(pixels, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def _spatial_template(patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per patch pixel, the 2x2 (cell index, weight) pairs of bilinear binning.

    Returns ``cells`` and ``weights`` of shape (patch_size**2, 4), pixels in
    row-major order. Out-of-range neighbours get weight 0.
    """
    cell = patch_size / SPATIAL_BINS
    u = (np.arange(patch_size) + 0.5) / cell - 0.5
    lo = np.floor(u).astype(np.int64)
    frac = u - lo
    idx = np.stack([lo, lo + 1], axis=1)  # (P, 2)
    wt = np.stack([1.0 - frac, frac], axis=1)
    valid = (idx >= 0) & (idx < SPATIAL_BINS)
    wt = np.where(valid, wt, 0.0)
    idx = np.clip(idx, 0, SPATIAL_BINS - 1)
    # combine rows (y) and columns (x): order (ry, rx, sy, sx)
    cells = idx[:, None, :, None] * SPATIAL_BINS + idx[None, :, None, :]
    weights = wt[:, None, :, None] * wt[None, :, None, :]
    return cells.reshape(patch_size * patch_size, 4), weights.reshape(patch_size * patch_size, 4)


def _orientation_bins(gx: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per pixel: magnitude plus two (bin, weight) pairs of linear orientation binning."""
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * math.pi)
    pos = theta * (ORIENTATION_BINS / (2.0 * math.pi))
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % ORIENTATION_BINS
    bins = np.stack([lo, (lo + 1) % ORIENTATION_BINS], axis=-1)
    weights = np.stack([1.0 - frac, frac], axis=-1)
    return mag, bins, weights


def normalize_sift(vectors: np.ndarray) -> np.ndarray:
    """L2 normalize, clamp at 0.2, renormalize; all-zero rows stay zero."""
    out = np.array(vectors, dtype=np.float64)
    _unit_rows(out)
    np.minimum(out, CLAMP, out=out)
    _unit_rows(out)
    return out


def _unit_rows(a: np.ndarray) -> None:
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    nz = norms > 0
    a[nz] /= norms[nz, None]


def extract_descriptors(
    img: Image, grid_step: int = 8, patch_size: int = 16, image_id=None
) -> DescriptorSet:
    """Dense grid descriptors, one per ``patch_size`` square every ``grid_step`` pixels."""
    if patch_size < 8 or patch_size % 4:
        raise ValueError("patch_size must be >= 8 and divisible by 4")
    if grid_step < 1:
        raise ValueError("grid_step must be >= 1")
    if img.width < MIN_SIDE or img.height < MIN_SIDE:
        raise ImageTooSmall(f"{img.width}x{img.height} is below {MIN_SIDE}x{MIN_SIDE}")
    if img.width < patch_size or img.height < patch_size:
        raise ImageTooSmall(f"{img.width}x{img.height} cannot hold a {patch_size}px patch")

    gx, gy = image_gradients(img.pixels)
    mag, obins, oweights = _orientation_bins(gx.ravel(), gy.ravel())
    cells, sweights = _spatial_template(patch_size)

    xs = grid_origins(img.width, patch_size, grid_step)
    ys = grid_origins(img.height, patch_size, grid_step)
    rel = (np.arange(patch_size)[:, None] * img.width + np.arange(patch_size)[None, :]).ravel()
    origins = (ys[:, None] * img.width + xs[None, :]).ravel()
    pix = origins[:, None] + rel[None, :]  # (patches, patch pixels), row-major

    n_patches = len(origins)
    # contributions per (patch, pixel, spatial neighbour, orientation neighbour);
    # flattening in C order keeps accumulation in row-major pixel order
    bins = (
        cells[None, :, :, None] * ORIENTATION_BINS + obins[pix][:, :, None, :]
    ) + (np.arange(n_patches) * DIM)[:, None, None, None]
    weights = mag[pix][:, :, None, None] * sweights[None, :, :, None] * oweights[pix][:, :, None, :]
    hist = np.bincount(bins.ravel(), weights=weights.ravel(), minlength=n_patches * DIM)
    vectors = normalize_sift(hist.reshape(n_patches, DIM))

    half = (patch_size - 1) / 2.0
    keypoints = [
        Keypoint(float(x + half), float(y + half), patch_size / 2.0, 0.0)
        for y in ys
        for x in xs
    ]
    return DescriptorSet(image_id=image_id, keypoints=keypoints, vectors=vectors)


# ---------------------------------------------------------------------------
# BOFD descriptor files
# ---------------------------------------------------------------------------


def export_descriptors(ds: DescriptorSet) -> bytes:
    parts = [_HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, ds.dim, len(ds))]
    for kp, vec in zip(ds.keypoints, ds.vectors):
        parts.append(_RECORD.pack(kp.x, kp.y, kp.scale, kp.orientation, *vec))
    return b"".join(parts)


def import_descriptors(data: bytes, image_id=None) -> DescriptorSet:
    """Parse a ``BOFD`` file.

    Components must be finite and non-negative. Norms are not enforced so
    raw output of external SIFT tools (e.g. integer-scaled) is accepted.
    """
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise MalformedDescriptorFile("truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != DESCRIPTOR_MAGIC:
        raise MalformedDescriptorFile(f"bad magic {magic!r}")
    if version != DESCRIPTOR_VERSION:
        raise MalformedDescriptorFile(f"unsupported version {version}")
    if dim != DIM:
        raise DimensionMismatch(f"descriptor dim {dim}, expected {DIM}")
    if len(data) != _HEADER.size + count * _RECORD.size:
        raise MalformedDescriptorFile(
            f"expected {count} records, payload is {len(data) - _HEADER.size} bytes"
        )
    raw = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, 4 + DIM)
    if not np.all(np.isfinite(raw)):
        raise MalformedDescriptorFile("non-finite value")
    geom = raw[:, :4].astype(np.float64)
    vectors = raw[:, 4:].astype(np.float64)
    if np.any(vectors < 0):
        raise MalformedDescriptorFile("negative descriptor component")
    if np.any(geom[:, 2] <= 0):
        raise MalformedDescriptorFile("non-positive keypoint scale")
    keypoints = [Keypoint(*map(float, row)) for row in geom]
    return DescriptorSet(image_id=image_id, keypoints=keypoints, vectors=vectors)
