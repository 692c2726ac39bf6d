"""Exhaustive ground truth on tiny domains.

Every subset of the free cells (or district vertices) is enumerated and its
perimeter is evaluated with the same discrete functional the solver uses.
Perimeters are accumulated group by group through lookup tables indexed
by the local bit pattern of the few cells a group depends on, so a chunk
of subsets is processed with a handful of vectorized integer operations.
Integer-valued metrics (anisotropic, graph cut) stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .field import DomainMask, GradientStencil, tv
from .solver import RestrictedGradient, restrict

MAX_CELLS = 22
HULL_TOL = 1e-9
_CHUNK = 1 << 16


class InstanceTooLarge(ValueError):
    """Raised when exhaustive enumeration would exceed the budget."""


def _operator(target, metric) -> tuple:
    from .graph import GraphDomain, incidence

    if isinstance(target, GraphDomain):
        return incidence(target), "graph"
    if not isinstance(target, DomainMask):
        raise TypeError("target must be a DomainMask or GraphDomain")
    stencil = metric if isinstance(metric, GradientStencil) else GradientStencil(metric, target.ndim)
    return restrict(target.require_nonempty(), stencil), stencil.label


def _check_size(n: int):
    if n > MAX_CELLS:
        raise InstanceTooLarge(f"instance too large: {n} free cells (limit {MAX_CELLS})")


def _group_tables(op: RestrictedGradient):
    """Per group: involved columns and the norm for every local bit pattern."""
    G = op.matrix.tocsr()
    gs = op.group_size
    exact = gs == 1 and np.all(G.data == np.round(G.data))
    groups = []
    for g in range(op.n_groups):
        block = G[g * gs:(g + 1) * gs]
        cols = np.unique(block.indices)
        if cols.size == 0:
            continue
        dense = block[:, cols].toarray()
        pats = (np.arange(1 << cols.size)[:, None] >> np.arange(cols.size)) & 1
        vals = pats @ dense.T
        if exact:
            table = np.abs(vals).sum(axis=1).round().astype(np.int64)
        else:
            table = np.sqrt(np.sum(vals * vals, axis=1)) if gs > 1 else np.abs(vals).sum(axis=1)
        groups.append((cols, table))
    return groups, exact


def _bit_reverse(codes: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(codes)
    for b in range(n):
        out |= ((codes >> b) & 1) << (n - 1 - b)
    return out


@dataclass(frozen=True)
class BinaryProfile:
    """Minimal perimeter of subsets of each cardinality.

    ``entries[k]`` is an ``int`` for exact metrics and a ``float``
    otherwise.  ``minimizers[k]`` is a bitmask over the free cells (bit
    ``i`` is ``free[i]``) of the lexicographically first minimizer.
    """

    entries: tuple
    minimizers: tuple
    free: np.ndarray
    metric: str
    exact: bool
    target: object = None

    @property
    def size(self) -> int:
        return len(self.entries) - 1

    def subset(self, code: int) -> np.ndarray:
        """Indices (in the full grid or vertex set) of the cells in ``code``."""
        bits = np.array([(code >> i) & 1 for i in range(self.size)], dtype=bool)
        return self.free[bits]

    def as_dict(self) -> dict:
        return {k: v for k, v in enumerate(self.entries)}


def binary_profile(target, metric="aniso") -> BinaryProfile:
    """Exhaustive minimal perimeter for every subset size.

    ``target`` is a :class:`DomainMask` (metric names a stencil kind) or a
    graph domain (metric ignored; edge cut).  At most ``MAX_CELLS`` free
    cells are allowed.
    """
    op, label = _operator(target, metric)
    n = op.n_free
    _check_size(n)
    groups, exact = _group_tables(op)
    dtype = np.int64 if exact else float
    big = np.iinfo(np.int64).max if exact else np.inf
    best = np.full(n + 1, big, dtype=dtype)
    best_rev = np.full(n + 1, -1, dtype=np.int64)  # max bit-reversed code = lexicographically first set
    total = 1 << n
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        per = np.zeros(codes.size, dtype=dtype)
        for cols, table in groups:
            pat = np.zeros(codes.size, dtype=np.int64)
            for j, c in enumerate(cols):
                pat |= ((codes >> int(c)) & 1) << j
            per += table[pat]
        pc = np.zeros(codes.size, dtype=np.int64)
        for b in range(n):
            pc += (codes >> b) & 1
        order = np.lexsort((per, pc))
        pcs, vals = pc[order], per[order]
        first = np.flatnonzero(np.r_[True, pcs[1:] != pcs[:-1]])
        for i in first:
            k, v = int(pcs[i]), vals[i]
            sel = (pc == k) & (per <= v + (0 if exact else HULL_TOL))
            rev = int(_bit_reverse(codes[sel], n).max())
            if exact:
                if v < best[k] or (v == best[k] and rev > best_rev[k]):
                    best[k], best_rev[k] = v, rev
            elif v < best[k] - HULL_TOL:
                best[k], best_rev[k] = v, rev
            elif abs(v - best[k]) <= HULL_TOL:
                best[k] = min(best[k], v)
                best_rev[k] = max(best_rev[k], rev)
    mins = tuple(int(_bit_reverse(np.array([r], dtype=np.int64), n)[0]) for r in best_rev)
    entries = tuple(int(v) for v in best) if exact else tuple(float(v) for v in best)
    return BinaryProfile(entries, mins, op.free.copy(), label, bool(exact), target)


def naive_perimeter(target, metric, profile_free: np.ndarray, code: int) -> float:
    """Perimeter of one subset recomputed from scratch (cross-check path)."""
    from .graph import GraphDomain, graph_tv

    bits = np.array([(code >> i) & 1 for i in range(profile_free.size)], dtype=float)
    if isinstance(target, GraphDomain):
        f = np.zeros(target.n_vertices)
        f[profile_free] = bits
        return graph_tv(target, f)
    f = np.zeros(target.dims).reshape(-1)
    f[profile_free] = bits
    stencil = metric if isinstance(metric, GradientStencil) else GradientStencil(metric, target.ndim)
    return tv(f.reshape(target.dims), stencil)


class ConvexEnvelope:
    """Lower convex envelope of a binary profile, piecewise linear on ``[0, n]``."""

    def __init__(self, vertices, exact: bool):
        self.vertices = tuple(vertices)
        self.exact = exact
        self._x = np.array([float(x) for x, _ in self.vertices])
        self._y = np.array([float(y) for _, y in self.vertices])

    def __call__(self, t) -> float | np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self._x[-1] + 1e-12):
            raise ValueError("envelope evaluated outside [0, n]")
        out = np.interp(t, self._x, self._y)
        return float(out) if out.ndim == 0 else out

    def exact_value(self, t) -> Fraction:
        """Envelope at a rational ``t`` in exact arithmetic (exact metrics only)."""
        if not self.exact:
            raise ValueError("exact evaluation needs an integer-valued metric")
        t = Fraction(t)
        for (x0, y0), (x1, y1) in zip(self.vertices, self.vertices[1:]):
            if x0 <= t <= x1:
                return Fraction(y0) + Fraction(y1 - y0, x1 - x0) * (t - x0)
        raise ValueError("envelope evaluated outside [0, n]")

    @property
    def initial_slope(self):
        (x0, y0), (x1, y1) = self.vertices[0], self.vertices[1]
        return Fraction(y1 - y0, x1 - x0) if self.exact else (y1 - y0) / (x1 - x0)


def convex_envelope(profile: BinaryProfile) -> ConvexEnvelope:
    """Lower convex hull of ``{(k, entries[k])}`` (monotone chain)."""
    pts = list(enumerate(profile.entries))
    if not pts:
        raise ValueError("empty profile")
    if len(pts) == 1:
        return ConvexEnvelope([pts[0], pts[0]], profile.exact)
    tol = 0 if profile.exact else HULL_TOL
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (ax, ay), (bx, by) = hull[-2], hull[-1]
            cross = (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)
            if cross <= tol:
                hull.pop()
            else:
                break
        hull.append(p)
    return ConvexEnvelope(hull, profile.exact)


def cheeger_exhaustive(target, metric="aniso", profile: BinaryProfile | None = None):
    """Minimal perimeter-to-size ratio and its first minimizing subset.

    Ties prefer the smallest subset, then the lexicographically first one.
    Returns ``(h1, cells)`` with ``h1`` a ``Fraction`` for exact metrics.
    """
    prof = profile or binary_profile(target, metric)
    best_k, best = None, None
    for k in range(1, prof.size + 1):
        r = Fraction(prof.entries[k], k) if prof.exact else prof.entries[k] / k
        if best is None or (r < best if prof.exact else r < best - HULL_TOL):
            best_k, best = k, r
    return best, prof.subset(prof.minimizers[best_k])


def envelope_deviation(values, profile: BinaryProfile) -> float:
    """Largest ``|values[k] - envelope(k)|`` over integer masses ``k``."""
    env = convex_envelope(profile)
    ks = np.arange(profile.size + 1)
    return float(np.max(np.abs(np.asarray(values, dtype=float) - env(ks))))


def random_mask(rng: np.random.Generator, shape=(5, 5), n_cells: int = 12) -> DomainMask:
    """Random mask with exactly ``n_cells`` ones (test-instance generator)."""
    total = math.prod(shape)
    cells = rng.choice(total, size=min(n_cells, total), replace=False)
    a = np.zeros(total, dtype=bool)
    a[cells] = True
    return DomainMask.from_array(a.reshape(shape))
