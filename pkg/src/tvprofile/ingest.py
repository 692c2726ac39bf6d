"""Decoding of masks, polygons, densities and voxel volumes.

Raster conventions: axis 0 is the image row, axis 1 the column.  Polygon
coordinates ``(x, y)`` map to column ``x`` and row ``y``.  Every decoder
returns a mask padded with one ring of zeros.
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from shapely.geometry import LinearRing

from .field import DomainError, DomainMask
from .profile import DensityField

PAD = 1
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class InputError(DomainError):
    """Malformed or unsupported input data."""


# ---------------------------------------------------------------- images

def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` header integers, skipping comments; return (values, offset)."""
    vals, pos = [], 2
    pat = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)")
    for _ in range(count):
        m = pat.match(data, pos)
        if not m:
            raise InputError("malformed PGM header")
        vals.append(int(m.group(1)))
        pos = m.end()
    return vals, pos


def read_pgm(data: bytes) -> tuple:
    """Decode a P2 or P5 PGM; returns ``(array, maxval)``."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InputError("not a PGM file (expected P2 or P5)")
    (w, h, maxval), pos = _pgm_tokens(data, 3)
    if w < 1 or h < 1:
        raise InputError("PGM has zero size")
    if not 0 < maxval < 65536:
        raise InputError(f"unsupported PGM maxval {maxval}")
    if magic == b"P2":
        body = data[pos:].split()
        if len(body) < w * h:
            raise InputError("PGM body is shorter than its header")
        try:
            arr = np.array([int(v) for v in body[: w * h]], dtype=np.int64)
        except ValueError as exc:
            raise InputError("non-integer PGM sample") from exc
    else:
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise InputError("malformed PGM header")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(data) - pos < need:
            raise InputError("PGM body is shorter than its header")
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(np.int64)
    if arr.max(initial=0) > maxval:
        raise InputError("PGM sample exceeds maxval")
    return arr.reshape(h, w), maxval


def write_pgm(arr, binary: bool = True, maxval: int = 255) -> bytes:
    """Encode a 2D integer array as PGM (P5 by default, P2 if ``binary`` is false)."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError("PGM images are 2D")
    a = a.astype(np.int64)
    if a.min(initial=0) < 0 or a.max(initial=0) > maxval:
        raise ValueError("sample out of range for maxval")
    h, w = a.shape
    head = f"P{5 if binary else 2}\n{w} {h}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return head + a.astype(dtype).tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in a)
    return head + rows.encode() + b"\n"


def read_png(data: bytes) -> tuple:
    """Decode an 8-bit grayscale (or bilevel) PNG; returns ``(array, 255)``."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode PNG: {exc}") from exc
    if img.mode == "1":
        img = img.convert("L")
    if img.mode != "L":
        raise InputError(f"unsupported PNG mode {img.mode!r}; need 8-bit grayscale")
    return np.asarray(img, dtype=np.int64), 255


def _sniff(data: bytes, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
        if fmt not in ("pgm", "png"):
            raise InputError(f"unknown image format {fmt!r}")
        return fmt
    if data.startswith(_PNG_MAGIC):
        return "png"
    if data[:2] in (b"P2", b"P5"):
        return "pgm"
    raise InputError("unrecognized image format")


def read_gray(data: bytes, fmt: str | None = None) -> tuple:
    return read_png(data) if _sniff(data, fmt) == "png" else read_pgm(data)


def load_mask(data: bytes, fmt: str | None = None, dx: float = 1.0) -> DomainMask:
    """Threshold a grayscale image (``> maxval / 2`` is inside) into a padded mask."""
    arr, maxval = read_gray(data, fmt)
    ind = arr > 0.5 * maxval
    if not ind.any():
        raise InputError("image has no pixels above the threshold (empty mask)")
    return DomainMask.from_array(ind, dx=dx, pad=PAD)


def mask_to_pgm(mask: DomainMask, binary: bool = True) -> bytes:
    """Interior of a 2D mask as a black/white PGM (255 inside)."""
    if mask.ndim != 2:
        raise DomainError("PGM output needs a 2D mask")
    return write_pgm(mask.interior().astype(np.int64) * 255, binary=binary)


def load_density(data: bytes, fmt: str | None, mask: DomainMask) -> DensityField:
    """Grayscale weights on the mask's interior grid, normalized to unit mass over the domain."""
    arr, _ = read_gray(data, fmt)
    interior = tuple(n - 2 * mask.pad for n in mask.dims)
    if arr.shape != interior:
        raise InputError(f"density is {arr.shape}, mask interior is {interior}")
    w = np.pad(arr.astype(float), mask.pad)
    total = float(w[mask.data].sum())
    if not total > 0:
        raise InputError("density is zero everywhere inside the domain")
    return DensityField(w / total)


# ---------------------------------------------------------------- volumes

def load_volume(data: bytes, dx: float = 1.0) -> DomainMask:
    """Raw volume: three little-endian uint32 extents, then one byte per voxel (C order)."""
    if len(data) < 12:
        raise InputError("volume header is truncated")
    dims = struct.unpack("<3I", data[:12])
    if min(dims) < 1:
        raise InputError("volume has a zero extent")
    n = dims[0] * dims[1] * dims[2]
    if len(data) - 12 != n:
        raise InputError(f"volume payload has {len(data) - 12} bytes, header promises {n}")
    vox = np.frombuffer(data, dtype=np.uint8, offset=12).reshape(dims) > 127
    if not vox.any():
        raise InputError("volume is empty")
    return DomainMask.from_array(vox, dx=dx, pad=PAD)


def write_volume(arr) -> bytes:
    """Encode a 3D uint8 array in the raw volume format."""
    a = np.asarray(arr)
    if a.ndim != 3:
        raise ValueError("volumes are 3D")
    return struct.pack("<3I", *a.shape) + np.ascontiguousarray(a, dtype=np.uint8).tobytes()


# ---------------------------------------------------------------- polygons

@dataclass(frozen=True)
class PolygonSpec:
    """Outer ring plus optional holes, rasterized into an ``N x N`` box."""

    rings: tuple
    target_resolution: int = 250

    def __post_init__(self):
        rings = []
        for r in self.rings:
            a = np.asarray(r, dtype=float)
            if a.ndim != 2 or a.shape[1] != 2:
                raise InputError("rings must be sequences of (x, y) pairs")
            if len(a) > 1 and np.array_equal(a[0], a[-1]):
                a = a[:-1]
            if len(a) < 3:
                raise InputError("a ring needs at least 3 vertices")
            if not np.all(np.isfinite(a)):
                raise InputError("non-finite polygon coordinate")
            if not LinearRing(a).is_simple:
                raise InputError("ring is self-intersecting")
            a.setflags(write=False)
            rings.append(a)
        if not rings:
            raise InputError("polygon has no rings")
        if self.target_resolution < 1:
            raise InputError("target resolution must be positive")
        object.__setattr__(self, "rings", tuple(rings))


def parse_polygon(text: str, resolution: int = 250) -> PolygonSpec:
    """One ring per line, ``x y`` pairs separated by commas; ``#`` starts a comment."""
    rings = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        pts = []
        for pair in line.split(","):
            parts = pair.split()
            if len(parts) != 2:
                raise InputError(f"line {lineno}: expected 'x y', got {pair.strip()!r}")
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise InputError(f"line {lineno}: bad coordinate") from exc
        rings.append(pts)
    return PolygonSpec(tuple(rings), resolution)


def format_polygon(poly: PolygonSpec) -> str:
    return "".join(", ".join(f"{x:.17g} {y:.17g}" for x, y in r) + "\n" for r in poly.rings)


def rasterize(poly: PolygonSpec, dx: float = 1.0) -> DomainMask:
    """Even-odd fill of cell centers after fitting the polygon into ``[0, N]^2``.

    The bounding box is scaled uniformly so its longer side spans ``N``
    cells and is centered along the shorter side.
    """
    N = poly.target_resolution
    allpts = np.vstack(poly.rings)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    ext = hi - lo
    if not ext.max() > 0:
        raise InputError("degenerate polygon (zero extent)")
    s = N / ext.max()
    shift = (N - ext * s) / 2.0
    rings = [(r - lo) * s + shift for r in poly.rings]

    centers = np.arange(N) + 0.5
    inside = np.zeros((N, N), dtype=bool)
    for r in rings:
        x0, y0 = r[:, 0], r[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        for row, yc in enumerate(centers):
            hit = (y0 <= yc) != (y1 <= yc)
            if not hit.any():
                continue
            xa, ya, xb, yb = x0[hit], y0[hit], x1[hit], y1[hit]
            xs = xa + (yc - ya) * (xb - xa) / (yb - ya)
            counts = np.searchsorted(np.sort(xs), centers, side="right")
            inside[row] ^= (counts % 2).astype(bool)
    if not inside.any():
        raise InputError("degenerate polygon (no cell centers inside)")
    return DomainMask.from_array(inside, dx=dx, pad=PAD)
