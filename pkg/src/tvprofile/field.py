"""Grid domains, discrete gradients and discrete total variation.

All solver-side arithmetic happens in pixel units (grid spacing 1).  The
physical spacing ``dx`` only enters through :func:`mass` and
:func:`tv_to_perimeter` when values are reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ISOTROPIC = "isotropic"
ANISOTROPIC = "anisotropic"

# Difference offsets (plus, minus) per gradient component.  The 2D
# isotropic layout is the four-fold stencil: two forward x-differences on
# rows j and j+1, two forward y-differences on columns i and i+1.
_OFFSETS = {
    (ISOTROPIC, 2): (
        ((1, 0), (0, 0)),
        ((0, 1), (0, 0)),
        ((1, 1), (0, 1)),
        ((1, 1), (1, 0)),
    ),
    (ANISOTROPIC, 2): (
        ((1, 0), (0, 0)),
        ((0, 1), (0, 0)),
    ),
    (ISOTROPIC, 3): (
        ((1, 0, 0), (0, 0, 0)),
        ((0, 1, 0), (0, 0, 0)),
        ((0, 0, 1), (0, 0, 0)),
    ),
    (ANISOTROPIC, 3): (
        ((1, 0, 0), (0, 0, 0)),
        ((0, 1, 0), (0, 0, 0)),
        ((0, 0, 1), (0, 0, 0)),
    ),
}

_ALIASES = {
    "isotropic": ISOTROPIC,
    "iso": ISOTROPIC,
    "fourfold": ISOTROPIC,
    "isotropic-fourfold": ISOTROPIC,
    "anisotropic": ANISOTROPIC,
    "aniso": ANISOTROPIC,
    "anisotropic-forward": ANISOTROPIC,
}


class DomainError(ValueError):
    """Raised for malformed domains or fields."""


@dataclass(frozen=True)
class GradientStencil:
    """Discrete gradient used to measure total variation.

    ``kind="isotropic"`` is the four-fold stencil in 2D (Euclidean norm over
    four components) and the plain forward-difference 3-vector with a
    Euclidean norm in 3D.  ``kind="anisotropic"`` uses forward differences
    with an L1 norm, i.e. every component is its own group; this metric
    satisfies the discrete co-area formula exactly.
    """

    kind: str = ISOTROPIC
    ndim: int = 2

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise DomainError(f"unknown stencil kind {self.kind!r}")
        if self.ndim not in (2, 3):
            raise DomainError(f"stencils exist for 2D and 3D grids, got ndim={self.ndim}")
        object.__setattr__(self, "kind", kind)

    @property
    def offsets(self):
        return _OFFSETS[(self.kind, self.ndim)]

    @property
    def arity(self) -> int:
        """Gradient components per grid point."""
        return len(self.offsets)

    @property
    def group_size(self) -> int:
        """Components sharing one Euclidean norm (1 means plain L1)."""
        return self.arity if self.kind == ISOTROPIC else 1

    @property
    def kappa(self) -> float:
        """Calibration from raw stencil TV to physical perimeter per unit dx."""
        if self.kind == ISOTROPIC and self.ndim == 2:
            return 1.0 / math.sqrt(2.0)
        return 1.0

    @property
    def label(self) -> str:
        if self.kind == ISOTROPIC:
            return "fourfold" if self.ndim == 2 else "isotropic"
        return "aniso"

    def for_ndim(self, ndim: int) -> "GradientStencil":
        return GradientStencil(self.kind, ndim)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DomainMask:
    """Binary indicator of a domain on a zero-padded uniform grid.

    ``data`` includes the padding; use :meth:`from_array` to pad an
    unpadded indicator.
    """

    data: np.ndarray
    dx: float = 1.0
    pad: int = 1

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim not in (2, 3):
            raise DomainError(f"masks must be 2D or 3D, got {data.ndim}D")
        if self.pad < 1:
            raise DomainError("padding width must be at least 1")
        if not (self.dx > 0):
            raise DomainError("grid spacing must be positive")
        if data.dtype != bool:
            if not np.isin(data, (0, 1)).all():
                raise DomainError("mask values must be 0 or 1")
            data = data.astype(bool)
        inner = tuple(slice(self.pad, n - self.pad) for n in data.shape)
        if any(n <= 2 * self.pad for n in data.shape):
            raise DomainError("mask is too small for its padding")
        interior = np.zeros_like(data)
        interior[inner] = data[inner]
        if (interior != data).any():
            raise DomainError("mask has nonzero cells inside the padding band")
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def from_array(cls, indicator, dx: float = 1.0, pad: int = 1) -> "DomainMask":
        """Pad an unpadded indicator array with ``pad`` cells of zeros."""
        arr = np.asarray(indicator)
        if arr.dtype != bool:
            if not np.isin(arr, (0, 1)).all():
                raise DomainError("mask values must be 0 or 1")
            arr = arr.astype(bool)
        return cls(np.pad(arr, pad), dx=dx, pad=pad)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def count(self) -> int:
        """Number of cells inside the domain."""
        return int(self.data.sum())

    @property
    def volume(self) -> float:
        """Area (2D) or volume (3D) of the domain in physical units."""
        return self.count * self.dx**self.ndim

    def interior(self) -> np.ndarray:
        """The indicator with the padding band removed."""
        p = self.pad
        return self.data[tuple(slice(p, n - p) for n in self.dims)]

    def require_nonempty(self) -> "DomainMask":
        if self.count == 0:
            raise DomainError("mask is empty")
        return self


@dataclass(frozen=True)
class ScalarField:
    """Real values on the grid of a :class:`DomainMask`."""

    data: np.ndarray
    dx: float = 1.0
    pad: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(np.asarray(self.data, dtype=float)))

    @classmethod
    def like(cls, mask: DomainMask, data=None) -> "ScalarField":
        if data is None:
            data = np.zeros(mask.dims)
        data = np.asarray(data, dtype=float)
        if data.shape != mask.dims:
            raise DomainError(f"field shape {data.shape} does not match mask {mask.dims}")
        return cls(data, dx=mask.dx, pad=mask.pad)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def box_violation(self, mask: DomainMask) -> float:
        """Largest amount by which ``0 <= f <= mask`` fails."""
        m = mask.data.astype(float)
        return float(max(np.max(-self.data, initial=0.0), np.max(self.data - m, initial=0.0)))


def _as_array(f) -> np.ndarray:
    return np.asarray(f.data if isinstance(f, (ScalarField, DomainMask)) else f, dtype=float)


def gradient(f, stencil: GradientStencil) -> np.ndarray:
    """Stencil gradient at every grid point.

    Returns an array of shape ``dims + (arity,)``.  Values beyond the grid
    are taken as zero, which is harmless on padded fields.  The result is
    in pixel units; divide by ``dx`` for physical derivatives.
    """
    a = _as_array(f)
    if a.ndim != stencil.ndim:
        raise DomainError(f"{a.ndim}D field used with a {stencil.ndim}D stencil")
    ext = np.pad(a, [(0, 1)] * a.ndim)
    n = a.shape

    def shifted(off):
        return ext[tuple(slice(o, o + k) for o, k in zip(off, n))]

    comps = [shifted(plus) - shifted(minus) for plus, minus in stencil.offsets]
    return np.stack(comps, axis=-1)


def group_norms(v: np.ndarray, group_size: int) -> np.ndarray:
    """Norm of each group of ``group_size`` consecutive trailing entries."""
    v = np.asarray(v)
    if group_size == 1:
        return np.abs(v)
    if v.ndim > 1 and v.shape[-1] == group_size:
        return np.sqrt(np.sum(v * v, axis=-1))
    return np.sqrt(np.sum(v.reshape(v.shape[:-1] + (-1, group_size)) ** 2, axis=-1))


def tv(f, stencil: GradientStencil) -> float:
    """Discrete total variation in raw (pixel) units.

    The sum is correctly rounded, so it does not depend on cell order.
    """
    g = gradient(f, stencil)
    return math.fsum(group_norms(g, stencil.group_size).ravel())


def tv_to_perimeter(raw_tv: float, stencil: GradientStencil, dx: float = 1.0) -> float:
    """Convert raw stencil TV into a physical perimeter (2D) or area (3D)."""
    if raw_tv < 0:
        raise ValueError("raw TV must be nonnegative")
    return raw_tv * dx ** (stencil.ndim - 1) * stencil.kappa


def mass(f, dx: float | None = None) -> float:
    """Integral of a field: sum of cell values times the cell volume."""
    a = _as_array(f)
    if dx is None:
        dx = getattr(f, "dx", 1.0)
    return float(a.sum() * dx**a.ndim)


def ball_boundary_measure(volume: float, ndim: int) -> float:
    """Perimeter (2D) or surface area (3D) of the ball with the given volume."""
    if ndim == 2:
        return 2.0 * math.sqrt(math.pi * volume)
    if ndim == 3:
        return (36.0 * math.pi * volume**2) ** (1.0 / 3.0)
    raise DomainError(f"unsupported dimension {ndim}")
