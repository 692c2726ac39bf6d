"""Sampling TV profiles over prescribed masses.

A profile is sampled at normalized masses ``t_norm`` in ``[0, 1]`` (fraction
of the domain's volume, or of its density mass for weighted profiles).
Values are reported raw (stencil units) and normalized by the perimeter of
the ball with the domain's volume, so that a disc's profile is close to
the diagonal.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .field import (
    DomainError,
    DomainMask,
    GradientStencil,
    ScalarField,
    ball_boundary_measure,
    tv_to_perimeter,
)
from .solver import SolveOptions, SolverError, restrict, solve_restricted

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 64
CVX_FLOOR = 1e-9


class ProfileSample(NamedTuple):
    t_norm: float
    value_norm: float
    value_raw: float
    gap: float
    converged: bool
    iters: int = 0


@dataclass
class ProfileCurve:
    """Sampled TV profile with its normalization.

    ``t_scale`` is the raw mass at ``t_norm = 1`` and ``value_factor``
    converts raw objective values into normalized ones.
    """

    samples: list
    vol_omega: float
    norm_perimeter: float
    stencil: str
    t_scale: float
    value_factor: float
    weighted: bool = False
    kind: str = "raster"
    fields: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t_norm(self) -> np.ndarray:
        return np.array([s.t_norm for s in self.samples])

    @property
    def value_norm(self) -> np.ndarray:
        return np.array([s.value_norm for s in self.samples])

    @property
    def value_raw(self) -> np.ndarray:
        return np.array([s.value_raw for s in self.samples])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([s.gap for s in self.samples])

    @property
    def converged(self) -> np.ndarray:
        return np.array([s.converged for s in self.samples], dtype=bool)

    @property
    def t_raw(self) -> np.ndarray:
        return self.t_norm * self.t_scale

    def convexity_tolerance(self) -> float:
        ok = self.converged
        worst = float(np.max(self.gaps[ok], initial=0.0))
        return max(2.0 * worst, CVX_FLOOR * max(1.0, float(np.max(np.abs(self.value_raw[ok]), initial=0.0))))

    def convexity_violations(self, eps: float | None = None) -> list:
        """Indices of middle samples lying above the chord of their neighbours.

        Non-converged samples are skipped.  ``eps`` defaults to twice the
        worst duality gap (raw units).
        """
        eps = self.convexity_tolerance() if eps is None else eps
        ok = np.flatnonzero(self.converged)
        t, v = self.t_norm[ok], self.value_raw[ok]
        bad = []
        for a, b, c in zip(range(len(ok)), range(1, len(ok)), range(2, len(ok))):
            chord = v[a] + (v[c] - v[a]) * (t[b] - t[a]) / (t[c] - t[a])
            if v[b] > chord + eps:
                bad.append(int(ok[b]))
        return bad


def derivative(curve: ProfileCurve) -> list:
    """Forward divided differences ``(t_midpoint, slope)`` in normalized units."""
    if len(curve.samples) < 2:
        raise ValueError("a derivative needs at least two samples")
    t, v = curve.t_norm, curve.value_norm
    return [((t[i] + t[i + 1]) / 2, (v[i + 1] - v[i]) / (t[i + 1] - t[i])) for i in range(len(t) - 1)]


def default_t_grid(n: int = DEFAULT_SAMPLES) -> np.ndarray:
    return np.arange(1, n + 1) / n


def check_t_grid(t_grid) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.size == 0:
        raise ValueError("empty t grid")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t values must lie in [0, 1]")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t values must be strictly increasing")
    return t


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TVPROFILE_THREADS", "1")))
    except ValueError:
        return 1


def run_samples(op, t_raws, opts, warm_start=True, parallel=False, w=None, on_sample=None):
    """Solve at every raw mass; returns ``[(z or None, report or None)]``.

    With warm starts the solves run sequentially in order; ``parallel``
    fans independent cold-started solves over a thread pool.
    """

    def one(t_raw, warm=None):
        try:
            return solve_restricted(op, t_raw, opts, warm, w)
        except SolverError as exc:
            log.warning("sample t_raw=%g failed: %s", t_raw, exc)
            return None, None, None

    if parallel:
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            out = list(pool.map(one, t_raws))
        results = [(z, rep) for z, rep, _ in out]
        if on_sample:
            for i, r in enumerate(results):
                on_sample(i, r)
        return results

    results, warm = [], None
    for i, t_raw in enumerate(t_raws):
        z, rep, state = one(t_raw, warm if warm_start else None)
        if state is not None:
            warm = state
        results.append((z, rep))
        if on_sample:
            on_sample(i, (z, rep))
    return results


def _build_curve(t, results, value_factor, **kw) -> ProfileCurve:
    samples = []
    for tn, (z, rep) in zip(t, results):
        if rep is None:
            samples.append(ProfileSample(float(tn), math.nan, math.nan, math.inf, False, 0))
            continue
        samples.append(ProfileSample(float(tn), rep.objective_raw * value_factor, rep.objective_raw,
                                     rep.duality_gap, bool(rep.converged), rep.iters_used))
    return ProfileCurve(samples=samples, value_factor=value_factor, **kw)


def _raster_curve(mask, stencil, t, results, op, keep_fields, weighted, t_scale):
    vol = mask.volume
    norm = ball_boundary_measure(vol, mask.ndim)
    factor = tv_to_perimeter(1.0, stencil, mask.dx) / norm
    fields = None
    if keep_fields:
        fields = [None if z is None else ScalarField.like(mask, op.embed(z)) for z, _ in results]
    return _build_curve(t, results, factor, vol_omega=vol, norm_perimeter=norm, stencil=stencil.label,
                        t_scale=t_scale, weighted=weighted, kind="raster", fields=fields)


def sample_profile(mask: DomainMask, stencil: GradientStencil, t_grid=None,
                   opts: SolveOptions | None = None, warm_start: bool = True,
                   parallel: bool = False, keep_fields: bool = False, on_sample=None) -> ProfileCurve:
    """Sample the TV profile of ``mask`` at normalized masses ``t_grid``."""
    t = check_t_grid(default_t_grid() if t_grid is None else t_grid)
    op = restrict(mask.require_nonempty(), stencil)
    n = op.n_free
    results = run_samples(op, t * n, opts or SolveOptions(), warm_start and not parallel,
                          parallel, on_sample=on_sample)
    return _raster_curve(mask, stencil, t, results, op, keep_fields, False, float(n))


class CheegerEstimate(NamedTuple):
    h1: float
    cheeger_set: ScalarField
    probe_t: float
    gap: float
    converged: bool


def cheeger_estimate(mask: DomainMask, stencil: GradientStencil, opts: SolveOptions | None = None,
                     probe_t: float = 0.05) -> CheegerEstimate:
    """Cheeger constant from the profile slope at a small probe mass.

    Below the volume of a Cheeger set the profile is linear with slope
    ``h1``, and a minimizer is a multiple of the Cheeger set's indicator.
    ``probe_t`` must stay below that volume fraction.  The returned set is
    the minimizer rescaled to peak 1; with several Cheeger sets it can be
    fuzzy.
    """
    if not 0 < probe_t <= 1:
        raise ValueError("probe_t must lie in (0, 1]")
    op = restrict(mask.require_nonempty(), stencil)
    t_raw = probe_t * op.n_free
    z, rep, _ = solve_restricted(op, t_raw, opts or SolveOptions())
    cell = mask.dx**mask.ndim
    h1 = tv_to_perimeter(rep.objective_raw, stencil, mask.dx) / (t_raw * cell)
    gap = tv_to_perimeter(max(rep.duality_gap, 0.0), stencil, mask.dx) / (t_raw * cell)
    peak = float(np.max(z))
    shape = ScalarField.like(mask, op.embed(z / peak if peak > 0 else z))
    return CheegerEstimate(h1, shape, probe_t, gap, rep.converged)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative cell weights on the grid of a mask (padding included)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise DomainError("density weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def total(self, mask: DomainMask) -> float:
        """Weight carried by cells inside the domain."""
        return float(self.weights[mask.data].sum())

    @classmethod
    def uniform(cls, mask: DomainMask) -> "DensityField":
        return cls(mask.data.astype(float) / mask.count)


def sample_weighted_profile(mask: DomainMask, density: DensityField, stencil: GradientStencil,
                            t_grid=None, opts: SolveOptions | None = None, warm_start: bool = True,
                            parallel: bool = False, keep_fields: bool = False,
                            on_sample=None) -> ProfileCurve:
    """TV profile with the mass constraint measured by a density.

    ``t_grid`` is the fraction of the density mass inside the domain.
    Weights are rescaled to unit mean over the domain, which leaves the
    problem unchanged and keeps the penalties well scaled.
    """
    if density.weights.shape != mask.dims:
        raise DomainError(f"density shape {density.weights.shape} does not match mask {mask.dims}")
    t = check_t_grid(default_t_grid() if t_grid is None else t_grid)
    op = restrict(mask.require_nonempty(), stencil)
    w = op.extract(density.weights)
    total = float(w.sum())
    if not total > 0:
        raise DomainError("density has zero total weight inside the domain")
    w = w * (op.n_free / total)
    scale = float(w.sum())
    results = run_samples(op, t * scale, opts or SolveOptions(), warm_start and not parallel,
                          parallel, w=w, on_sample=on_sample)
    return _raster_curve(mask, stencil, t, results, op, keep_fields, True, scale)


def value_histogram(f: ScalarField, mask: DomainMask, bins: int = 20) -> tuple:
    """Histogram of in-domain values of a minimizer (diagnostic only)."""
    vals = np.asarray(f.data)[mask.data]
    return np.histogram(vals, bins=bins, range=(0.0, 1.0))
