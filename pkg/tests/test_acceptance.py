"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N PASS/FAIL`` line; the lines are also
collected in the ``acceptance criteria`` section of the pytest summary.
"""

import math
import time

import numpy as np
import pytest

from tvprofile.field import GradientStencil, tv_to_perimeter
from tvprofile.graph import GraphDomain, graph_profile, incidence, rook_graph
from tvprofile.oracle import binary_profile, cheeger_exhaustive, convex_envelope, random_mask
from tvprofile.profile import DensityField, cheeger_estimate, sample_profile, sample_weighted_profile
from tvprofile.shapes import ball, disc, equal_area_disc, nested_pairs, nonconvex, synthetic_suite
from tvprofile.solver import SolveOptions, restrict, solve_restricted

FOUR = GradientStencil("fourfold")
ANISO = GradientStencil("aniso")
TIGHT = SolveOptions(eps_rel=1e-9, gap_tol=1e-9, max_iters=20000)
GRID16 = np.arange(1, 17) / 16


# ---------------------------------------------------------------- shared data

@pytest.fixture(scope="module")
def tiny():
    """Twenty random masks with at most 18 free cells, solved at every integer mass."""
    rng = np.random.default_rng(2024)
    out = []
    t0 = time.perf_counter()
    for _ in range(20):
        m = random_mask(rng, (5, 5), int(rng.integers(4, 19)))
        ks = np.arange(m.count + 1)
        rows = {}
        for name, st in (("aniso", ANISO), ("fourfold", FOUR)):
            op, warm, vals = restrict(m, st), None, []
            for k in ks:
                _, rep, warm = solve_restricted(op, float(k), TIGHT, warm)
                vals.append(rep.objective_raw)
            rows[name] = (np.array(vals), binary_profile(m, st))
        out.append((m, rows))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def suite():
    """Synthetic shapes and their equal-area discs, 16 samples each."""
    curves = {}
    for name, m in synthetic_suite().items():
        d = equal_area_disc(m.count)
        curves[name] = (m, sample_profile(m, FOUR, GRID16), sample_profile(d, FOUR, GRID16))
    return curves


# ---------------------------------------------------------------- criteria

def test_01_disc_linearity(acceptance_report):
    R = 40
    t0 = time.perf_counter()
    c = sample_profile(disc(R, 128), FOUR, GRID16)
    elapsed = time.perf_counter() - t0
    dev = float(np.max(np.abs(c.value_norm - c.t_norm)))
    area = c.t_raw[0]  # dx = 1
    slope = tv_to_perimeter(c.value_raw[0], FOUR) / area
    rel = abs(slope / (2 / R) - 1)
    ok = dev <= 0.03 and rel <= 0.03 and elapsed < 60 and all(c.converged)
    acceptance_report(1, "disc linearity (R=40, 128^2, 16 samples)", ok,
                      f"max |value_norm - t| = {dev:.4f} (<= 0.03), slope/(2/R) - 1 = {rel:+.4f} (<= 0.03), "
                      f"{elapsed:.1f} s")
    assert ok


def test_02_oracle_envelope_equality(tiny, acceptance_report):
    data, elapsed = tiny
    worst = 0.0
    for m, rows in data:
        vals, prof = rows["aniso"]
        worst = max(worst, float(np.max(np.abs(vals - convex_envelope(prof)(np.arange(prof.size + 1))))))
    ok = worst <= 1e-6 and len(data) >= 20 and elapsed < 120
    acceptance_report(2, "envelope equality, anisotropic, 20 random masks <= 18 cells", ok,
                      f"max deviation {worst:.2e} (<= 1e-6), {elapsed:.1f} s for both stencils")
    assert ok


def test_03_relaxation_bound(tiny, acceptance_report):
    data, _ = tiny
    worst = -math.inf
    for m, rows in data:
        vals, prof = rows["fourfold"]
        worst = max(worst, float(np.max(vals - np.array(prof.entries))))
    ok = worst <= 1e-4
    acceptance_report(3, "relaxation bound, four-fold stencil", ok,
                      f"max(solver - binary) = {worst:.3e} (<= 1e-4)")
    assert ok


def test_04_convexity(suite, acceptance_report):
    bad = {}
    for name, (_, c, d) in suite.items():
        for label, curve in ((name, c), (f"{name}:disc", d)):
            v = curve.convexity_violations()
            if v or not all(curve.converged):
                bad[label] = v
    ok = not bad
    acceptance_report(4, "convexity chord test on the synthetic suite", ok,
                      f"{2 * len(suite)} curves, violations: {bad or 'none'}")
    assert ok


def test_05_isoperimetric_dominance(suite, acceptance_report):
    failures, strict = {}, {}
    for name, (_, c, d) in suite.items():
        if name == "disc":
            continue
        tol = c.gaps * c.value_factor + d.gaps * d.value_factor + 1e-9
        diff = c.value_norm - d.value_norm
        if np.any(diff < -tol):
            i = int(np.argmin(diff + tol))
            failures[name] = f"t={c.t_norm[i]:.4f}: shape {c.value_norm[i]:.4f} < disc {d.value_norm[i]:.4f}"
        strict[name] = bool(np.any(diff > tol))
    ok = not failures and all(strict.values())
    detail = "; ".join(f"{k} {v}" for k, v in failures.items()) or "all shapes dominate"
    acceptance_report(5, "equal-area disc lower-bounds every shape", ok,
                      f"{detail}; strict gap: {strict}")
    assert ok


def test_06_domain_monotonicity(acceptance_report):
    pairs = nested_pairs(np.random.default_rng(6), 10)
    worst = -math.inf
    for inner, outer in pairs:
        ks = np.arange(inner.count + 1)
        ci = sample_profile(inner, FOUR, ks / inner.count)
        co = sample_profile(outer, FOUR, ks / outer.count)
        excess = co.value_raw - ci.value_raw - (ci.gaps + co.gaps)
        worst = max(worst, float(np.max(excess)))
    ok = worst <= 1e-9
    acceptance_report(6, "domain monotonicity, 10 nested pairs", ok,
                      f"max(outer - inner - gaps) = {worst:.2e}")
    assert ok


def test_07_cheeger_consistency(tiny, suite, acceptance_report):
    data, _ = tiny
    worst = 0.0
    for m, _ in data:
        h_ex, _ = cheeger_exhaustive(m, "aniso")
        est = cheeger_estimate(m, ANISO, TIGHT)
        worst = max(worst, abs(est.h1 - float(h_ex)))
    spreads = {}
    for name, (m, _, _) in suite.items():
        c = sample_profile(m, FOUR, [0.02, 0.04, 0.06])
        s = c.value_raw / c.t_raw
        spreads[name] = float((s.max() - s.min()) / s.min())
    ok = worst <= 1e-3 and max(spreads.values()) <= 0.02
    acceptance_report(7, "Cheeger estimate vs exhaustive; small-t slopes", ok,
                      f"max |h1 - exhaustive| = {worst:.2e} (<= 1e-3), max slope spread "
                      f"{max(spreads.values()):.2e} (<= 0.02)")
    assert ok


def test_08_admm_certificate(acceptance_report):
    m = nonconvex(250)
    op = restrict(m, FOUR)
    gaps, fired, down, windows, iters = [], [], 0, 0, []
    for k in range(1, 6):
        _, rep, _ = solve_restricted(op, k / 6 * op.n_free, SolveOptions(max_iters=10000))
        gaps.append(rep.relative_gap)
        iters.append(rep.iters_used)
        fired.append(rep.penalty_updates > 0)
        bounds = [0] + [it for it, *_ in rep.penalty_history[1:]] + [rep.iters_used]
        res = {it: math.hypot(p, d) for it, p, d, _, _ in rep.residual_history}
        for a, b in zip(bounds, bounds[1:]):
            its = [it for it in res if a < it <= b]
            if len(its) >= 2 and its[-1] - its[0] >= 100:
                windows += 1
                down += res[its[-1]] <= res[its[0]]
    ok = max(gaps) <= 1e-3 and max(iters) <= 10000 and all(fired) and windows > 0 and down >= 0.9 * windows
    acceptance_report(8, "ADMM gap <= 1e-3 within 10k iterations on a 250^2 nonconvex mask", ok,
                      f"gaps {['%.1e' % g for g in gaps]}, iterations {iters}, penalty updates fired "
                      f"{all(fired)}, residual decreased in {down}/{windows} fixed-penalty windows")
    assert ok


def test_09_weighted_degeneracy(suite, acceptance_report):
    tol_rel = SolveOptions().gap_tol
    worst = 0.0
    for name, (m, c, _) in suite.items():
        w = sample_weighted_profile(m, DensityField.uniform(m), FOUR, GRID16)
        ratio = np.abs(w.value_raw - c.value_raw) / (2 * tol_rel * np.maximum(1.0, c.value_raw))
        worst = max(worst, float(ratio.max()))
    ok = worst <= 1.0
    acceptance_report(9, "uniform density reproduces the unweighted curve", ok,
                      f"max |diff| / (2 x solver tolerance) = {worst:.3f} (<= 1)")
    assert ok


def test_10_graph_envelope(acceptance_report):
    rng = np.random.default_rng(10)
    worst, count = 0.0, 0
    for i in range(12):
        n = int(rng.integers(8, 22))
        k = int(rng.integers(4, 17)) if n > 16 else int(rng.integers(3, n + 1))
        edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.25]
        g = GraphDomain(n, np.array(edges, dtype=int).reshape(-1, 2), rng.choice(n, size=min(k, 16), replace=False))
        n0 = g.v0.size
        c = graph_profile(g, np.arange(n0 + 1) / n0, TIGHT)
        env = convex_envelope(binary_profile(g))
        worst = max(worst, float(np.max(np.abs(c.value_raw - env(np.arange(n0 + 1))))))
        count += 1
    identical = True
    for shape in ((6, 7), (9, 5), (4, 4, 5)):
        m = random_mask(rng, shape, int(0.6 * np.prod(shape)))
        st = GradientStencil("aniso", len(shape))
        g = rook_graph(m)
        same_matrix = (incidence(g).matrix != restrict(m, st).matrix).nnz == 0
        a = graph_profile(g, GRID16)
        b = sample_profile(m, st, GRID16)
        identical &= same_matrix and np.array_equal(a.value_raw, b.value_raw)
    ok = worst <= 1e-6 and identical
    acceptance_report(10, "graph profile = exhaustive min-cut envelope; rook graphs = raster", ok,
                      f"{count} graphs, max deviation {worst:.2e} (<= 1e-6), rook pipelines identical: {identical}")
    assert ok


def test_11_voxel_ball(acceptance_report):
    m = ball(12, 32)
    st = GradientStencil("aniso", 3)
    c = sample_profile(m, st, GRID16, keep_fields=True)
    slopes = c.value_raw / c.t_raw
    lin = float(np.max(np.abs(slopes / slopes[0] - 1)))
    f = c.fields[0].data
    inside_mean = float(f[m.data].mean())
    frame_ok = abs(inside_mean * 255 - c.t_norm[0] * 255) <= 0.5 and np.all(f[~m.data] == 0)
    ok = lin <= 0.05 and frame_ok and all(c.converged)
    acceptance_report(11, "voxel ball (R=12, 32^3) linear within 5%; small-t frame", ok,
                      f"max slope deviation {lin:.4f} (<= 0.05), frame mean {inside_mean:.5f} vs "
                      f"t={c.t_norm[0]:.5f}, zero outside: {bool(np.all(f[~m.data] == 0))}")
    assert ok
