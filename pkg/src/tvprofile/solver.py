"""ADMM solver for the discretized TV profile problem.

The problem, over the free (in-domain) cells ``z``::

    minimize    sum_p || (G z)_p ||
    subject to  w . z = t,   0 <= z <= 1

is split as ``x = G z`` and ``z' = z`` so that every iteration is one
prefactored linear solve, a group soft-threshold and a clamp.  Penalties
are adapted by residual balancing.  Each solve is certified by a feasible
primal point (upper bound) and the dual objective evaluated at the
rescaled multiplier of the gradient constraint (lower bound).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import DomainError, DomainMask, GradientStencil, ScalarField, group_norms

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the iteration diverges or the linear system is not SPD."""


@dataclass(frozen=True)
class RestrictedGradient:
    """Stencil gradient restricted to the free cells of a domain.

    ``matrix`` maps the ``n_free`` free-cell values to gradient entries.
    Row ``r`` holds component ``rows[r] % arity`` at grid point
    ``rows[r] // arity``.  Rows that can only ever be zero are dropped:
    whole points for grouped (isotropic) stencils, single entries for
    anisotropic ones, so groups stay contiguous.
    """

    matrix: sp.csr_matrix
    group_size: int
    free: np.ndarray  # flat indices of free cells in the full grid
    rows: np.ndarray | None = None
    dims: tuple | None = None
    arity: int = 1

    @property
    def n_free(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_groups(self) -> int:
        return self.matrix.shape[0] // self.group_size

    def embed(self, z: np.ndarray) -> np.ndarray:
        """Scatter free-cell values into a zero grid."""
        out = np.zeros(int(np.prod(self.dims)))
        out[self.free] = z
        return out.reshape(self.dims)

    def extract(self, full: np.ndarray) -> np.ndarray:
        """Free-cell values of a full-grid array."""
        return np.asarray(full, dtype=float).reshape(-1)[self.free]

    def scatter_points(self, v: np.ndarray) -> np.ndarray:
        """Place row values into a ``dims + (arity,)`` grid array."""
        out = np.zeros(int(np.prod(self.dims)) * self.arity)
        out[self.rows] = v
        return out.reshape(tuple(self.dims) + (self.arity,))

    def gather_points(self, full: np.ndarray) -> np.ndarray:
        """Row values picked out of a ``dims + (arity,)`` array."""
        return np.asarray(full, dtype=float).reshape(-1)[self.rows]


def restrict(mask: DomainMask, stencil: GradientStencil) -> RestrictedGradient:
    """Restrict the stencil gradient to the nonzero cells of ``mask``."""
    if mask.ndim != stencil.ndim:
        raise DomainError(f"{mask.ndim}D mask used with a {stencil.ndim}D stencil")
    free = np.flatnonzero(mask.data)
    if free.size == 0:
        raise DomainError("mask is empty")
    dims = mask.dims
    coords = np.stack(np.unravel_index(free, dims), axis=1)
    arity = stencil.arity
    cols = np.arange(free.size)

    row_ids, col_ids, vals = [], [], []
    for c, (plus, minus) in enumerate(stencil.offsets):
        for off, sign in ((plus, 1.0), (minus, -1.0)):
            pts = np.ravel_multi_index(tuple((coords - np.asarray(off)).T), dims)
            row_ids.append(pts * arity + c)
            col_ids.append(cols)
            vals.append(np.full(free.size, sign))
    row_ids = np.concatenate(row_ids)
    if stencil.group_size == 1:
        rows = np.unique(row_ids)
    else:
        rows = (np.unique(row_ids // arity)[:, None] * arity + np.arange(arity)).reshape(-1)
    G = sp.csr_matrix(
        (np.concatenate(vals), (np.searchsorted(rows, row_ids), np.concatenate(col_ids))),
        shape=(rows.size, free.size),
    )
    G.sum_duplicates()
    G.eliminate_zeros()
    return RestrictedGradient(G, stencil.group_size, free, rows, tuple(dims), arity)


class NormalSolver:
    """Applies ``M^{-1}`` for ``M = rho G'G + tau w w' + beta I``.

    The sparse part ``rho G'G + beta I`` is factored once with SuperLU; the
    dense rank-one term is folded in with the Sherman-Morrison identity.
    """

    def __init__(self, G, rho: float, tau: float, beta: float, w=None):
        if rho <= 0 or beta <= 0 or tau < 0:
            raise SolverError(f"penalties must be positive (rho={rho}, tau={tau}, beta={beta})")
        G = sp.csr_matrix(G)
        n = G.shape[1]
        self.rho, self.tau, self.beta = float(rho), float(tau), float(beta)
        self.w = np.ones(n) if w is None else np.asarray(w, dtype=float)
        A = (rho * (G.T @ G) + beta * sp.identity(n, format="csr")).tocsc()
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:  # singular factor
            raise SolverError(f"normal matrix factorization failed: {exc}") from exc
        diag = self._lu.U.diagonal()
        if not np.all(diag > 0):
            raise SolverError("normal matrix is not positive definite")
        self._u = self._lu.solve(self.w)
        self._tau0 = self.tau
        self._denom = 1.0 + self.tau * float(self.w @ self._u)
        self._scale = 1.0

    def scaled(self, factor: float) -> "NormalSolver":
        """Solver for ``factor * M``, sharing this factorization."""
        other = object.__new__(NormalSolver)
        other.__dict__.update(self.__dict__)
        other.rho, other.tau, other.beta = self.rho * factor, self.tau * factor, self.beta * factor
        other._scale = self._scale * factor
        return other

    def solve(self, r: np.ndarray) -> np.ndarray:
        a = self._lu.solve(np.asarray(r, dtype=float))
        if self._tau0:
            a = a - (self._tau0 * float(self.w @ a) / self._denom) * self._u
        return a / self._scale if self._scale != 1.0 else a

    __call__ = solve


def factor_normal_matrix(G, rho: float, tau: float, beta: float, w=None) -> NormalSolver:
    """Factor ``rho G'G + tau w w' + beta I`` for repeated solves."""
    return NormalSolver(G, rho, tau, beta, w)


@dataclass(frozen=True)
class AdmmState:
    """One ADMM iterate: primal blocks, multipliers and penalties."""

    z: np.ndarray
    zp: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lam: float
    q: np.ndarray
    rho: float = 1.0
    tau: float = 1.0
    beta: float = 1.0
    iter: int = 0

    @classmethod
    def zeros(cls, n_free: int, n_rows: int, rho=1.0, tau=1.0, beta=1.0) -> "AdmmState":
        return cls(np.zeros(n_free), np.zeros(n_free), np.zeros(n_rows), np.zeros(n_rows),
                   0.0, np.zeros(n_free), rho, tau, beta, 0)

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.lam)
            and np.all(np.isfinite(self.z))
            and np.all(np.isfinite(self.x))
            and np.all(np.isfinite(self.y))
            and np.all(np.isfinite(self.q))
        )


@dataclass
class SolveOptions:
    eps_rel: float = 1e-4
    gap_tol: float = 1e-3
    max_iters: int = 10000
    penalty_update_period: int = 20
    max_penalty_updates: int = 50
    rho: float = 1.0
    beta: float = 1.0
    tau: float | None = None
    mass_weights: np.ndarray | None = None
    balance_factor: float = 10.0
    penalty_step: float = 2.0

    def __post_init__(self):
        if not self.eps_rel > 0:
            raise ValueError("eps_rel must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.penalty_update_period < 1:
            raise ValueError("penalty_update_period must be at least 1")


@dataclass
class SolveReport:
    objective_raw: float
    dual_lower_bound: float
    duality_gap: float
    iters_used: int
    converged: bool
    residual_history: list = field(default_factory=list)
    penalty_history: list = field(default_factory=list)
    gap_history: list = field(default_factory=list)
    penalty_updates: int = 0
    restarts: int = 0
    dual_lambda: float = 0.0

    @property
    def relative_gap(self) -> float:
        return self.duality_gap / max(1.0, abs(self.objective_raw))


def shrink_groups(H: np.ndarray, threshold: float, group_size: int) -> np.ndarray:
    """Group soft-threshold: the prox of ``threshold * sum ||H_p||``."""
    norms = group_norms(H, group_size)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.maximum(1.0 - threshold / norms, 0.0)
    c[norms == 0] = 0.0
    if group_size == 1:
        return c * H
    return (H.reshape(-1, group_size) * c[:, None]).reshape(-1)


def admm_step(state: AdmmState, solver: NormalSolver, op: RestrictedGradient, t_raw: float,
              w: np.ndarray | None = None) -> AdmmState:
    """One full ADMM cycle (z solve, x shrink, z' clamp, dual ascent)."""
    G = op.matrix
    rho, tau, beta = state.rho, state.tau, state.beta
    w = np.ones(op.n_free) if w is None else w
    r = G.T @ (rho * state.x + state.y) + (t_raw * tau - state.lam) * w + (beta * state.zp - state.q)
    z = solver.solve(r)
    Gz = G @ z
    x = shrink_groups(Gz - state.y / rho, 1.0 / rho, op.group_size)
    zp = np.clip(z + state.q / beta, 0.0, 1.0)
    y = state.y + rho * (x - Gz)
    lam = state.lam + tau * (float(w @ z) - t_raw)
    q = state.q + beta * (z - zp)
    return AdmmState(z, zp, x, y, lam, q, rho, tau, beta, state.iter + 1)


def project_feasible(v: np.ndarray, t_raw: float, w: np.ndarray | None = None) -> np.ndarray:
    """Euclidean projection onto ``{0 <= f <= 1, w.f = t}`` (w >= 0)."""
    v = np.asarray(v, dtype=float)
    w = np.ones_like(v) if w is None else np.asarray(w, dtype=float)
    total = float(w.sum())
    if t_raw <= 0:
        return np.where(w > 0, 0.0, np.clip(v, 0.0, 1.0))
    if t_raw >= total:
        return np.where(w > 0, 1.0, np.clip(v, 0.0, 1.0))

    pos = w > 0
    vp, wp = v[pos], w[pos]
    upper, lower = (vp - 1.0) / wp, vp / wp  # f=1 below upper, f=0 above lower

    def mass_at(theta):
        return float(wp @ np.clip(vp - theta * wp, 0.0, 1.0))

    # mass(theta) is piecewise linear and nonincreasing with these breakpoints
    bps = np.unique(np.concatenate([upper, lower]))
    lo, hi = 0, bps.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mass_at(bps[mid]) >= t_raw:
            lo = mid
        else:
            hi = mid
    a, b = bps[lo], bps[hi]
    if mass_at(a) < t_raw:
        theta = a
    else:
        mid = 0.5 * (a + b)
        full = upper >= mid
        free = (upper < mid) & (lower > mid)
        c = float(wp[full].sum() + wp[free] @ vp[free])
        s2 = float(wp[free] @ wp[free])
        theta = (c - t_raw) / s2 if s2 > 0 else a
        theta = min(max(theta, a), b)
    f = v.copy()
    f[pos] = np.clip(vp - theta * wp, 0.0, 1.0)
    f[~pos] = np.clip(v[~pos], 0.0, 1.0)
    return f


def primal_objective(op: RestrictedGradient, z: np.ndarray) -> float:
    return float(np.sum(group_norms(op.matrix @ z, op.group_size)))


def clip_dual(phi: np.ndarray, group_size: int) -> np.ndarray:
    """Project multiplier rows onto the dual-norm unit ball."""
    phi = np.asarray(phi, dtype=float)
    if group_size == 1:
        return np.clip(phi, -1.0, 1.0)
    g = phi.reshape(-1, group_size)
    n = np.sqrt(np.sum(g * g, axis=1))
    s = np.where(n > 1.0, 1.0 / np.where(n > 0, n, 1.0), 1.0)
    return (g * s[:, None]).reshape(-1)


def best_lambda(h: np.ndarray, t_raw: float, w: np.ndarray) -> float:
    """Maximize ``lam t - sum max(lam w + h, 0)`` over ``lam``."""
    pos = w > 0
    if not pos.any():
        return 0.0
    kinks = -h[pos] / w[pos]
    order = np.argsort(kinks, kind="stable")
    cw = np.cumsum(w[pos][order])
    j = int(np.searchsorted(cw, t_raw, side="left"))
    j = min(max(j, 0), kinks.size - 1)
    return float(kinks[order][j])


def _dual_value(h, lam, t_raw, w) -> float:
    return float(lam * t_raw - np.sum(np.maximum(lam * w + h, 0.0)))


def dual_bound(op: RestrictedGradient, phi_rows: np.ndarray, t_raw: float,
               w: np.ndarray | None = None, lam: float | None = None):
    """Lower bound from a multiplier on the restricted gradient rows.

    ``phi_rows`` is projected onto the feasible set first.  When ``lam`` is
    None the optimal scalar for this ``phi`` is used.  Returns
    ``(bound, lam)``.
    """
    w = np.ones(op.n_free) if w is None else np.asarray(w, dtype=float)
    phi = clip_dual(phi_rows, op.group_size)
    h = op.matrix.T @ phi  # h = -div(phi)
    if lam is None:
        lam = best_lambda(h, t_raw, w)
    return _dual_value(h, lam, t_raw, w), lam


def dual_objective(mask: DomainMask, stencil: GradientStencil, phi: np.ndarray, lam: float,
                   t_raw: float, weights=None) -> float:
    """Dual objective ``lam t - sum_{p in domain} max(lam - div(phi)_p, 0)``.

    ``phi`` is a per-point field of shape ``dims + (arity,)``; rows violating
    the dual-norm bound are projected back.  The discrete divergence is the
    negative adjoint of the stencil gradient, so the value never exceeds
    the primal optimum.
    """
    op = restrict(mask, stencil)
    w = None if weights is None else op.extract(weights)
    return dual_bound(op, op.gather_points(phi), t_raw, w, lam)[0]


def _residuals(state, prev, op, t_raw, w):
    G = op.matrix
    Gz = G @ state.z
    r_x = state.x - Gz
    r_m = float(w @ state.z) - t_raw
    r_b = state.z - state.zp
    pri = float(np.sqrt(r_x @ r_x + r_m * r_m + r_b @ r_b))
    s = state.rho * (G.T @ (state.x - prev.x)) + state.beta * (state.zp - prev.zp)
    dual = float(np.linalg.norm(s))
    pri_scale = max(np.sqrt(Gz @ Gz + float(w @ state.z) ** 2 + state.z @ state.z),
                    np.sqrt(state.x @ state.x + t_raw**2 + state.zp @ state.zp), 1e-12)
    Gty = G.T @ state.y
    dual_scale = max(float(np.linalg.norm(Gty)), abs(state.lam) * float(np.linalg.norm(w)),
                     float(np.linalg.norm(state.q)), 1e-12)
    return pri, dual, pri / pri_scale, dual / dual_scale


def default_tau(w: np.ndarray) -> float:
    """Mass penalty: ``|w|^2``, i.e. the number of free cells for unit weights."""
    return max(float(w @ w), 1e-12)


def solve_restricted(op: RestrictedGradient, t_raw: float, opts: SolveOptions | None = None,
                     warm: AdmmState | None = None, w: np.ndarray | None = None):
    """Run ADMM on a prebuilt restricted operator.

    Returns ``(z, report, state)`` where ``z`` is an exactly feasible point
    (box and mass) and ``state`` can warm-start the next solve.
    """
    opts = opts or SolveOptions()
    n = op.n_free
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    total = float(w.sum())
    if not (-1e-12 <= t_raw <= total * (1 + 1e-12)):
        raise ValueError(f"t_raw={t_raw} outside [0, {total}]")
    t_raw = min(max(float(t_raw), 0.0), total)

    if t_raw == 0.0 or (t_raw == total and np.all(w > 0)):
        z = project_feasible(np.zeros(n), t_raw, w)
        obj = primal_objective(op, z)
        Gz = op.matrix @ z
        phi = -_subgradient(Gz, op.group_size)  # y converges to minus a subgradient
        lb, lam = dual_bound(op, phi, t_raw, w)
        state = warm or AdmmState.zeros(n, op.matrix.shape[0], opts.rho, _tau(opts, w), opts.beta)
        rep = SolveReport(obj, lb, obj - lb, 0, True, dual_lambda=lam)
        return z, rep, state

    for attempt in range(2):
        scale = 0.5**attempt
        try:
            return _iterate(op, t_raw, opts, warm if attempt == 0 else None, w, scale, attempt)
        except _Diverged:
            log.warning("ADMM diverged; restarting with halved penalties")
    raise SolverError("ADMM diverged twice")


class _Diverged(Exception):
    pass


def _tau(opts, w):
    return opts.tau if opts.tau is not None else default_tau(w)


def _subgradient(Gz, group_size):
    if group_size == 1:
        return np.sign(Gz)
    g = Gz.reshape(-1, group_size)
    n = np.sqrt(np.sum(g * g, axis=1))
    return (g / np.where(n > 0, n, 1.0)[:, None]).reshape(-1)


def _iterate(op, t_raw, opts, warm, w, scale, attempt):
    n, m = op.n_free, op.matrix.shape[0]
    if warm is not None and warm.z.shape == (n,) and warm.x.shape == (m,):
        state = replace(warm, iter=0)
    else:
        state = AdmmState.zeros(n, m, opts.rho * scale, _tau(opts, w) * scale, opts.beta * scale)
        state = replace(state, z=np.full(n, t_raw / w.sum()), zp=np.full(n, t_raw / w.sum()))
    base = factor_normal_matrix(op.matrix, state.rho, state.tau, state.beta, w)
    solver = base

    best_obj, best_z = np.inf, None
    best_lb, best_lam = -np.inf, 0.0
    res_hist, pen_hist, gap_hist = [], [(0, state.rho, state.tau, state.beta)], []
    updates = 0
    period = opts.penalty_update_period
    converged = False
    prev = state
    for it in range(1, opts.max_iters + 1):
        state = admm_step(state, solver, op, t_raw, w)
        if it % period and it != opts.max_iters:
            prev = state
            continue
        if not state.is_finite():
            raise _Diverged()
        pri, dua, pri_rel, dua_rel = _residuals(state, prev, op, t_raw, w)
        res_hist.append((it, pri, dua, pri_rel, dua_rel))

        z = project_feasible(state.zp, t_raw, w)
        obj = primal_objective(op, z)
        if obj < best_obj:
            best_obj, best_z = obj, z
        lb, lam = dual_bound(op, state.y, t_raw, w)
        if lb > best_lb:
            best_lb, best_lam = lb, lam
        gap = best_obj - best_lb
        gap_hist.append((it, best_obj, best_lb))
        if max(pri_rel, dua_rel) <= opts.eps_rel and gap <= opts.gap_tol * max(1.0, best_obj):
            converged = True
            break

        if updates < opts.max_penalty_updates:
            k = opts.balance_factor
            factor = 1.0
            if pri_rel > k * dua_rel:
                factor = opts.penalty_step
            elif dua_rel > k * pri_rel:
                factor = 1.0 / opts.penalty_step
            if factor != 1.0:
                updates += 1
                solver = base.scaled(solver._scale * factor)
                state = replace(state, rho=solver.rho, tau=solver.tau, beta=solver.beta)
                pen_hist.append((it, state.rho, state.tau, state.beta))
        prev = state

    rep = SolveReport(
        objective_raw=best_obj,
        dual_lower_bound=best_lb,
        duality_gap=best_obj - best_lb,
        iters_used=state.iter,
        converged=converged,
        residual_history=res_hist,
        penalty_history=pen_hist,
        gap_history=gap_hist,
        penalty_updates=updates,
        restarts=attempt,
        dual_lambda=best_lam,
    )
    return best_z, rep, state


def solve(mask: DomainMask, stencil: GradientStencil, t_raw: float,
          opts: SolveOptions | None = None, warm: AdmmState | None = None):
    """Minimize discrete TV over ``0 <= f <= mask`` with prescribed mass.

    ``t_raw`` is in cell units (number of cells, or weighted cell mass when
    ``opts.mass_weights`` is given as a full-grid array).  Returns
    ``(ScalarField, SolveReport)``.
    """
    opts = opts or SolveOptions()
    op = restrict(mask.require_nonempty(), stencil)
    w = None if opts.mass_weights is None else op.extract(opts.mass_weights)
    z, rep, _ = solve_restricted(op, t_raw, opts, warm, w)
    return ScalarField.like(mask, op.embed(z)), rep
