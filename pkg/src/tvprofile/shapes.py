"""Synthetic test shapes sampled at cell centers.

Coordinates are in cells with the origin at the corner of the unpadded
grid; a cell ``(row, col)`` has center ``(row + 0.5, col + 0.5)``.
"""

from __future__ import annotations

import math

import numpy as np

from .field import DomainMask


def _grid(n: int, m: int | None = None):
    m = n if m is None else m
    yy, xx = np.mgrid[0:n, 0:m] + 0.5
    return yy, xx


def disc(radius: float, size: int | None = None, dx: float = 1.0) -> DomainMask:
    """Disc of the given radius (cells) centered in a ``size x size`` grid."""
    size = size if size is not None else 2 * math.ceil(radius) + 2
    yy, xx = _grid(size)
    c = size / 2
    return DomainMask.from_array((xx - c) ** 2 + (yy - c) ** 2 <= radius**2, dx=dx)


def equal_area_disc(count: int, dx: float = 1.0) -> DomainMask:
    """Disc whose area matches ``count`` cells as closely as the raster allows."""
    r = math.sqrt(count / math.pi)
    return disc(r, 2 * math.ceil(r) + 4, dx=dx)


def ball(radius: float, size: int | None = None, dx: float = 1.0) -> DomainMask:
    """Voxel ball centered in a ``size^3`` grid."""
    size = size if size is not None else 2 * math.ceil(radius) + 2
    zz, yy, xx = np.mgrid[0:size, 0:size, 0:size] + 0.5
    c = size / 2
    return DomainMask.from_array((xx - c) ** 2 + (yy - c) ** 2 + (zz - c) ** 2 <= radius**2, dx=dx)


def rectangle(height: int, width: int, margin: int = 0) -> DomainMask:
    a = np.zeros((height + 2 * margin, width + 2 * margin), dtype=bool)
    a[margin:margin + height, margin:margin + width] = True
    return DomainMask.from_array(a)


def square(side: int, margin: int = 0) -> DomainMask:
    return rectangle(side, side, margin)


def annulus(r_out: float, r_in: float, size: int | None = None) -> DomainMask:
    size = size if size is not None else 2 * math.ceil(r_out) + 2
    yy, xx = _grid(size)
    c = size / 2
    d2 = (xx - c) ** 2 + (yy - c) ** 2
    return DomainMask.from_array((d2 <= r_out**2) & (d2 > r_in**2))


def s_shape(scale: int = 8) -> DomainMask:
    """Block letter S with stroke width ``scale``: three bars and two uprights."""
    w, h = 4 * scale, 5 * scale
    a = np.zeros((h, w), dtype=bool)
    for k in (0, 2, 4):
        a[k * scale:(k + 1) * scale, :] = True
    a[scale:2 * scale, :scale] = True
    a[3 * scale:4 * scale, w - scale:] = True
    return DomainMask.from_array(a)


def barbell(radius: float = 12, bar_length: float = 30, bar_width: float = 6) -> DomainMask:
    """Two equal discs joined by a straight bar."""
    W = int(math.ceil(4 * radius + bar_length)) + 2
    H = int(math.ceil(2 * radius)) + 2
    yy, xx = _grid(H, W)
    cy = H / 2
    c1, c2 = 1 + radius, W - 1 - radius
    a = ((xx - c1) ** 2 + (yy - cy) ** 2 <= radius**2) | ((xx - c2) ** 2 + (yy - cy) ** 2 <= radius**2)
    a |= (np.abs(yy - cy) < bar_width / 2) & (xx > c1) & (xx < c2)
    return DomainMask.from_array(a)


def nonconvex(size: int = 250) -> DomainMask:
    """Two unequal lobes, a thin bridge and a long tentacle (scaled to ``size``)."""
    s = size / 250
    yy, xx = _grid(size)
    a = ((xx - 60 * s) ** 2 + (yy - 125 * s) ** 2 <= (50 * s) ** 2)
    a |= (xx - 195 * s) ** 2 + (yy - 100 * s) ** 2 <= (40 * s) ** 2
    a |= (np.abs(yy - 115 * s) < 6 * s) & (xx > 60 * s) & (xx < 195 * s)
    a |= (np.abs(xx - 195 * s) < 5 * s) & (yy > 100 * s) & (yy < 240 * s)
    return DomainMask.from_array(a)


def synthetic_suite(scale: float = 1.0) -> dict:
    """The shape family used for structural checks (disc, square, annulus, S, barbell)."""
    return {
        "disc": disc(16 * scale),
        "square": square(int(round(28 * scale)), margin=1),
        "annulus": annulus(18 * scale, 9 * scale),
        "s_shape": s_shape(int(round(6 * scale))),
        "barbell": barbell(10 * scale, 20 * scale, 5 * scale),
    }


def nested_pairs(rng: np.random.Generator, count: int = 10, size: int = 8) -> list:
    """Pairs ``(inner, outer)`` of masks on a common grid with ``inner`` inside ``outer``."""
    pairs = []
    while len(pairs) < count:
        outer = rng.random((size, size)) < 0.7
        inner = outer & (rng.random((size, size)) < 0.6)
        if inner.sum() < 3 or inner.sum() == outer.sum():
            continue
        pairs.append((DomainMask.from_array(inner), DomainMask.from_array(outer)))
    return pairs
