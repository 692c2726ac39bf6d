"""TV profile of a vertex subset of a graph.

The graph functional is the sum of ``|f(u) - f(v)|`` over edges with ``f``
supported on the district ``V0``.  Only edges touching ``V0`` matter, and
vertices outside ``V0`` act as a fixed zero boundary, so the solver sees a
signed incidence matrix on the ``V0`` columns with scalar (L1) groups.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .field import DomainError, DomainMask
from .profile import ProfileCurve, _build_curve, check_t_grid, default_t_grid, run_samples
from .solver import RestrictedGradient, SolveOptions


@dataclass(frozen=True, eq=False)
class GraphDomain:
    """Undirected simple graph with a distinguished vertex subset ``v0``.

    ``edges`` is an ``(m, 2)`` integer array; its order (and the orientation
    of each pair) is kept because it fixes the row order of the incidence
    operator.
    """

    n_vertices: int
    edges: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        n = int(self.n_vertices)
        if n < 1:
            raise DomainError("graph needs at least one vertex")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        v0 = np.asarray(self.v0, dtype=np.int64).reshape(-1)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise DomainError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise DomainError("self-loops are not allowed")
        key = np.sort(e, axis=1)
        if np.unique(key, axis=0).shape[0] != key.shape[0]:
            raise DomainError("duplicate edge")
        if v0.size == 0:
            raise DomainError("district V0 is empty")
        if v0.min() < 0 or v0.max() >= n:
            raise DomainError("V0 vertex out of range")
        if np.unique(v0).size != v0.size:
            raise DomainError("duplicate vertex in V0")
        for name, a in (("edges", e), ("v0", np.sort(v0))):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "n_vertices", n)

    def __eq__(self, other):
        if not isinstance(other, GraphDomain):
            return NotImplemented
        return (self.n_vertices == other.n_vertices and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.v0, other.v0))

    __hash__ = None

    @property
    def in_v0(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.v0] = True
        return flag

    @property
    def boundary_edges(self) -> int:
        """Number of edges with exactly one endpoint in ``v0``."""
        inside = self.in_v0[self.edges]
        return int(np.count_nonzero(inside[:, 0] != inside[:, 1]))

    def relabel(self, perm) -> "GraphDomain":
        """Same graph with vertex ``i`` renamed ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return GraphDomain(self.n_vertices, perm[self.edges], perm[self.v0])


def parse_graph(text: str) -> GraphDomain:
    """Read the edge-list format: ``n m k``, m lines ``u v``, k lines of V0."""
    tokens = text.split()
    try:
        vals = [int(s) for s in tokens]
    except ValueError as exc:
        raise DomainError(f"non-integer token in graph file: {exc}") from exc
    if len(vals) < 3:
        raise DomainError("graph header must be 'n m k'")
    n, m, k = vals[:3]
    if m < 0 or k < 0:
        raise DomainError("negative counts in graph header")
    if len(vals) != 3 + 2 * m + k:
        raise DomainError(f"graph body has {len(vals) - 3} integers, header promises {2 * m + k}")
    edges = np.array(vals[3:3 + 2 * m], dtype=np.int64).reshape(m, 2)
    v0 = np.array(vals[3 + 2 * m:], dtype=np.int64)
    return GraphDomain(n, edges, v0)


def format_graph(domain: GraphDomain) -> str:
    buf = io.StringIO()
    buf.write(f"{domain.n_vertices} {len(domain.edges)} {len(domain.v0)}\n")
    for u, v in domain.edges:
        buf.write(f"{u} {v}\n")
    for v in domain.v0:
        buf.write(f"{v}\n")
    return buf.getvalue()


def graph_tv(domain: GraphDomain, f) -> float:
    """Sum of absolute differences of ``f`` over all edges."""
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size != domain.n_vertices:
        raise DomainError(f"f has {f.size} entries for {domain.n_vertices} vertices")
    if np.any(f[~domain.in_v0] != 0):
        raise DomainError("f must vanish outside V0")
    if len(domain.edges) == 0:
        return 0.0
    return float(np.sum(np.abs(f[domain.edges[:, 0]] - f[domain.edges[:, 1]])))


def incidence(domain: GraphDomain) -> RestrictedGradient:
    """Signed incidence rows (+1 at u, -1 at v) for edges touching V0."""
    inside = domain.in_v0
    col = np.full(domain.n_vertices, -1, dtype=np.int64)
    col[domain.v0] = np.arange(domain.v0.size)
    e = domain.edges
    keep = np.flatnonzero(inside[e[:, 0]] | inside[e[:, 1]]) if len(e) else np.zeros(0, dtype=np.int64)
    rows, cols, vals = [], [], []
    for end, sign in ((0, 1.0), (1, -1.0)):
        sel = keep[inside[e[keep, end]]]
        rows.append(np.searchsorted(keep, sel))
        cols.append(col[e[sel, end]])
        vals.append(np.full(sel.size, sign))
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(keep.size, domain.v0.size))
    G.sum_duplicates()
    return RestrictedGradient(G, 1, domain.v0.copy(), keep, (domain.n_vertices,), 1)


def graph_profile(domain: GraphDomain, t_grid=None, opts: SolveOptions | None = None,
                  warm_start: bool = True, parallel: bool = False, on_sample=None) -> ProfileCurve:
    """Sample the graph TV profile at fractions ``t_grid`` of ``|V0|``.

    Values are normalized by the boundary edge count of ``V0`` so that
    ``t = 1`` maps to 1.  When ``V0`` has no boundary edges the factor is 1
    and ``meta["value_normalizer"]`` records it.
    """
    t = check_t_grid(default_t_grid() if t_grid is None else t_grid)
    op = incidence(domain)
    n = op.n_free
    results = run_samples(op, t * n, opts or SolveOptions(), warm_start and not parallel,
                          parallel, on_sample=on_sample)
    b = domain.boundary_edges
    norm = float(b) if b > 0 else 1.0
    meta = {"value_normalizer": "boundary_edges" if b > 0 else "none", "boundary_edges": b,
            "mass_normalizer": "|V0|", "v0_size": n}
    return _build_curve(t, results, 1.0 / norm, vol_omega=float(n), norm_perimeter=norm,
                        stencil="graph", t_scale=float(n), kind="graph", meta=meta)


def rook_graph(mask: DomainMask) -> GraphDomain:
    """Rook-contiguity graph on all cells of a 2D or 3D mask grid.

    Vertices are flat cell indices of the padded grid; ``V0`` is the
    domain.  Edges ``(p + e_c, p)`` are emitted point by point and axis by
    axis, which reproduces the row order of the anisotropic raster
    operator, so both pipelines build the same matrix.
    """
    dims = mask.dims
    n = int(np.prod(dims))
    idx = np.arange(n).reshape(dims)
    blocks = []
    for c in range(len(dims)):
        src = np.full(dims, -1, dtype=np.int64)
        sl_lo = [slice(None)] * len(dims)
        sl_hi = [slice(None)] * len(dims)
        sl_lo[c] = slice(0, dims[c] - 1)
        sl_hi[c] = slice(1, None)
        src[tuple(sl_lo)] = idx[tuple(sl_hi)]
        blocks.append(src.reshape(-1))
    nbr = np.stack(blocks, axis=1)  # (n, ndim), -1 where the neighbour falls off the grid
    p = np.repeat(np.arange(n), len(dims))
    q = nbr.reshape(-1)
    ok = q >= 0
    edges = np.stack([q[ok], p[ok]], axis=1)
    return GraphDomain(n, edges, np.flatnonzero(mask.data))
