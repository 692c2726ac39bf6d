"""Command-line interface: profiles, frames, Cheeger estimates and oracle checks.

Exit codes: 0 success, 1 input error, 2 at least one solve did not converge
(outputs are still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .field import DomainError, GradientStencil
from .graph import graph_profile, parse_graph
from .ingest import (
    InputError,
    load_density,
    load_mask,
    load_volume,
    parse_polygon,
    rasterize,
    write_pgm,
    write_volume,
)
from .oracle import InstanceTooLarge, binary_profile, convex_envelope
from .profile import (
    ProfileCurve,
    cheeger_estimate,
    default_t_grid,
    derivative,
    sample_profile,
    sample_weighted_profile,
)
from .solver import SolveOptions, restrict, solve_restricted
from .svg import line_plot

log = logging.getLogger("tvprofile")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2
PROFILE_HEADER = "t_norm,value_norm,value_raw,gap,converged"
ORACLE_TOL = {"aniso": 1e-6, "fourfold": 1e-4, "isotropic": 1e-4, "graph": 1e-6}

_EXT = {".pgm": "pgm", ".png": "png", ".poly": "poly", ".txt": "poly", ".graph": "graph",
        ".edges": "graph", ".vol": "volume", ".raw": "volume"}


def num(v: float) -> str:
    """Fixed CSV float format."""
    v = float(v)
    if v == 0:
        return "0"
    return f"{v:.10g}"


def parse_t_grid(spec: str) -> np.ndarray:
    """``n`` (n >= 1) gives ``k/n`` for k = 1..n; anything else is a comma list."""
    s = spec.strip()
    if s.isdigit() and int(s) >= 1:
        return default_t_grid(int(s))
    try:
        return np.array([float(v) for v in s.split(",") if v.strip()])
    except ValueError as exc:
        raise InputError(f"bad --t-grid {spec!r}") from exc


def _format_of(path: str, fmt: str | None) -> str:
    if fmt:
        return fmt
    ext = Path(path).suffix.lower()
    if ext not in _EXT:
        raise InputError(f"cannot infer the format of {path!r}; pass --format")
    return _EXT[ext]


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def load_domain(args):
    """Mask (2D raster or polygon, or 3D volume) from ``--input``."""
    if not args.input:
        raise InputError("--input is required")
    fmt = _format_of(args.input, args.format)
    data = _read(args.input)
    if fmt in ("pgm", "png"):
        return load_mask(data, fmt, dx=args.dx)
    if fmt == "poly":
        return rasterize(parse_polygon(data.decode(), args.resolution), dx=args.dx)
    if fmt == "volume":
        return load_volume(data, dx=args.dx)
    raise InputError(f"format {fmt!r} is not a raster domain")


def _stencil(args, ndim: int) -> GradientStencil:
    kind = args.stencil or ("fourfold" if ndim == 2 else "aniso")
    return GradientStencil(kind, ndim)


def _options(args, tight: bool = False) -> SolveOptions:
    eps = args.eps_rel if args.eps_rel is not None else (1e-9 if tight else 1e-4)
    gap = args.gap_tol if args.gap_tol is not None else (1e-9 if tight else 1e-3)
    iters = args.max_iters if args.max_iters is not None else (20000 if tight else 10000)
    return SolveOptions(eps_rel=eps, gap_tol=gap, max_iters=iters)


def _options_dict(o: SolveOptions) -> dict:
    return {k: getattr(o, k) for k in ("eps_rel", "gap_tol", "max_iters", "penalty_update_period",
                                        "max_penalty_updates", "rho", "beta", "tau")}


class _Clock:
    def __init__(self):
        self.last = time.perf_counter()
        self.times = []

    def __call__(self, i, result):
        now = time.perf_counter()
        self.times.append(round(now - self.last, 6))
        self.last = now


def write_profile_csv(curve: ProfileCurve, path: Path):
    lines = [PROFILE_HEADER]
    for s in curve.samples:
        lines.append(",".join([num(s.t_norm), num(s.value_norm), num(s.value_raw), num(s.gap),
                               "true" if s.converged else "false"]))
    path.write_text("\n".join(lines) + "\n")


def write_derivative_csv(curve: ProfileCurve, path: Path):
    lines = ["t_mid,slope"]
    if len(curve.samples) >= 2:
        lines += [f"{num(t)},{num(s)}" for t, s in derivative(curve)]
    path.write_text("\n".join(lines) + "\n")


def _frame_name(t: float, ext: str) -> str:
    return f"frame_{t:.6f}.{ext}"


def frame_image(f2d: np.ndarray) -> np.ndarray:
    """Inverted grayscale: 0 maps to white (255), 1 to black (0)."""
    return np.rint(255.0 * (1.0 - np.clip(f2d, 0.0, 1.0))).astype(np.int64)


def _interior(a: np.ndarray, pad: int) -> np.ndarray:
    return a[tuple(slice(pad, n - pad) for n in a.shape)]


def _manifest(args, out: Path, extra: dict):
    inputs = {}
    for p in (args.input, getattr(args, "density", None)):
        if p:
            inputs[p] = hashlib.sha256(_read(p)).hexdigest()
    m = {
        "command": args.command,
        "argv": args.argv,
        "inputs": inputs,
        "stencil": extra.pop("stencil", args.stencil),
        "t_grid": args.t_grid,
        "out_dir": str(out),
        "version": __version__,
    }
    m.update(extra)
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def _finish_curve(args, curve: ProfileCurve, opts, clock, stencil_label: str, title: str) -> int:
    out = Path(args.out_dir)
    write_profile_csv(curve, out / "profile.csv")
    write_derivative_csv(curve, out / "derivative.csv")
    if args.svg:
        (out / "profile.svg").write_text(line_plot([(title, curve.t_norm, curve.value_norm)], title=title))
    _manifest(args, out, {"stencil": stencil_label, "solver_options": _options_dict(opts),
                          "wall_clock_per_sample": clock.times,
                          "t_values": [float(t) for t in curve.t_norm],
                          "normalization": {"vol_omega": curve.vol_omega,
                                            "norm_perimeter": curve.norm_perimeter, **curve.meta}})
    return EXIT_OK if all(curve.converged) else EXIT_SOLVER


def cmd_profile(args) -> int:
    mask = load_domain(args)
    st = _stencil(args, mask.ndim)
    opts, clock = _options(args), _Clock()
    curve = sample_profile(mask, st, parse_t_grid(args.t_grid), opts, parallel=args.parallel, on_sample=clock)
    return _finish_curve(args, curve, opts, clock, st.label, "TV profile")


def cmd_volume_profile(args) -> int:
    mask = load_domain(args)
    if mask.ndim != 3:
        raise InputError("volume-profile needs a 3D volume input")
    st = _stencil(args, 3)
    opts, clock = _options(args), _Clock()
    curve = sample_profile(mask, st, parse_t_grid(args.t_grid), opts, parallel=args.parallel,
                           keep_fields=args.frames, on_sample=clock)
    if args.frames:
        out = Path(args.out_dir)
        for s, f in zip(curve.samples, curve.fields):
            if f is not None:
                vox = np.rint(255.0 * np.clip(_interior(f.data, mask.pad), 0, 1)).astype(np.uint8)
                (out / _frame_name(s.t_norm, "vol")).write_bytes(write_volume(vox))
    return _finish_curve(args, curve, opts, clock, st.label, "TV profile (3D)")


def cmd_weighted_profile(args) -> int:
    mask = load_domain(args)
    if not args.density:
        raise InputError("weighted-profile needs --density")
    dens = load_density(_read(args.density), None, mask)
    st = _stencil(args, mask.ndim)
    opts, clock = _options(args), _Clock()
    curve = sample_weighted_profile(mask, dens, st, parse_t_grid(args.t_grid), opts,
                                    parallel=args.parallel, on_sample=clock)
    return _finish_curve(args, curve, opts, clock, st.label, "weighted TV profile")


def cmd_graph_profile(args) -> int:
    if not args.input:
        raise InputError("--input is required")
    dom = parse_graph(_read(args.input).decode())
    opts, clock = _options(args), _Clock()
    curve = graph_profile(dom, parse_t_grid(args.t_grid), opts, parallel=args.parallel, on_sample=clock)
    return _finish_curve(args, curve, opts, clock, "graph", "graph TV profile")


def cmd_frames(args) -> int:
    mask = load_domain(args)
    if mask.ndim != 2:
        raise InputError("frames needs a 2D input; use volume-profile --frames for volumes")
    st = _stencil(args, 2)
    opts, clock = _options(args), _Clock()
    curve = sample_profile(mask, st, parse_t_grid(args.t_grid), opts, parallel=args.parallel,
                           keep_fields=True, on_sample=clock)
    out = Path(args.out_dir)
    names = []
    for s, f in zip(curve.samples, curve.fields):
        if f is None:
            continue
        name = _frame_name(s.t_norm, "pgm")
        (out / name).write_bytes(write_pgm(frame_image(_interior(f.data, mask.pad))))
        names.append(name)
    _manifest(args, out, {"stencil": st.label, "solver_options": _options_dict(opts),
                          "wall_clock_per_sample": clock.times, "frames": names})
    return EXIT_OK if all(curve.converged) else EXIT_SOLVER


def cmd_cheeger(args) -> int:
    mask = load_domain(args)
    st = _stencil(args, mask.ndim)
    opts = _options(args)
    est = cheeger_estimate(mask, st, opts, probe_t=args.probe_t)
    out = Path(args.out_dir)
    (out / "cheeger.json").write_text(json.dumps({"h1": est.h1, "probe_t": est.probe_t, "gap": est.gap},
                                                 indent=2, sort_keys=True) + "\n")
    data = _interior(est.cheeger_set.data, mask.pad)
    if mask.ndim == 2:
        (out / "cheeger_set.pgm").write_bytes(write_pgm(frame_image(data)))
    else:
        (out / "cheeger_set.vol").write_bytes(write_volume(np.rint(255 * np.clip(data, 0, 1)).astype(np.uint8)))
    _manifest(args, out, {"stencil": st.label, "solver_options": _options_dict(opts)})
    return EXIT_OK if est.converged else EXIT_SOLVER


def cmd_oracle_check(args) -> int:
    """Solver against exhaustive enumeration at every integer mass."""
    if not args.input:
        raise InputError("--input is required")
    fmt = _format_of(args.input, args.format)
    opts = _options(args, tight=True)
    if fmt == "graph":
        from .graph import incidence

        target = parse_graph(_read(args.input).decode())
        prof = binary_profile(target)
        op, label = incidence(target), "graph"
    else:
        target = load_domain(args)
        st = _stencil(args, target.ndim) if args.stencil else GradientStencil("aniso", target.ndim)
        prof = binary_profile(target, st)
        op, label = restrict(target, st), st.label
    env = convex_envelope(prof)
    tol = ORACLE_TOL[label]
    exact_env = label in ("aniso", "graph")
    print("k,solver,envelope,binary")
    worst, ok, warm = 0.0, True, None
    for k in range(prof.size + 1):
        _, rep, warm = solve_restricted(op, float(k), opts, warm)
        v = rep.objective_raw
        ok &= rep.converged
        print(f"{k},{num(v)},{num(env(k))},{num(prof.entries[k])}")
        # integer-valued metrics: equality with the envelope; otherwise the relaxation bound
        dev = abs(v - env(k)) if exact_env else max(v - prof.entries[k], 0.0)
        worst = max(worst, dev)
    kind = "envelope deviation" if exact_env else "relaxation-bound excess"
    passed = worst <= tol
    print(f"max {kind}: {worst:.3e} (tolerance {tol:g}) {'PASS' if passed else 'FAIL'}")
    if not ok:
        return EXIT_SOLVER
    return EXIT_OK if passed else EXIT_SOLVER


def cmd_rerun(args) -> int:
    if not args.manifest:
        raise InputError("rerun needs --manifest")
    try:
        m = json.loads(_read(args.manifest).decode())
        argv = list(m["argv"])
    except (ValueError, KeyError) as exc:
        raise InputError(f"bad manifest: {exc}") from exc
    if args.out_dir_override:
        argv += ["--out-dir", args.out_dir_override]
    return main(argv)


COMMANDS = {
    "profile": cmd_profile,
    "frames": cmd_frames,
    "cheeger": cmd_cheeger,
    "graph-profile": cmd_graph_profile,
    "weighted-profile": cmd_weighted_profile,
    "volume-profile": cmd_volume_profile,
    "oracle-check": cmd_oracle_check,
    "rerun": cmd_rerun,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvprofile", description="Total-variation isoperimetric profiles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        if name == "rerun":
            s.add_argument("--manifest", required=True)
            s.add_argument("--out-dir", dest="out_dir_override")
            continue
        s.add_argument("--input")
        s.add_argument("--format", choices=["pgm", "png", "poly", "graph", "volume"])
        s.add_argument("--stencil", choices=["fourfold", "aniso"])
        s.add_argument("--t-grid", default="64")
        s.add_argument("--eps-rel", type=float)
        s.add_argument("--gap-tol", type=float)
        s.add_argument("--max-iters", type=int)
        s.add_argument("--out-dir", default=".")
        s.add_argument("--svg", action="store_true")
        s.add_argument("--parallel", action="store_true")
        s.add_argument("--probe-t", type=float, default=0.05)
        s.add_argument("--density")
        s.add_argument("--resolution", type=int, default=250, help="polygon bounding-box size N")
        s.add_argument("--dx", type=float, default=1.0, help="grid spacing in physical units")
        if name == "volume-profile":
            s.add_argument("--frames", action="store_true", help="write per-t raw volume frames")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.argv = [a for a in argv]
    if hasattr(args, "out_dir"):
        try:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create {args.out_dir}: {exc}", file=sys.stderr)
            return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DomainError, ValueError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
