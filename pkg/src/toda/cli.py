"""Config-driven pipelines and artifact export.

    toda solve|lax-check|integrate|dpw|classify --config cfg.json [--out DIR] [--trunc N] [--tol X]

The summary (summary.json) holds only deterministic content; wall-clock
timings go to timings.json so that identical configs give identical
summaries and meshes.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from . import realforms
from .errors import ConfigError, TodaError, UnsupportedRepresentation
from .factorization import Potential, dpw_asymptotic, dpw_conformal
from .fields import Grid, Poly, ScalarField
from .frames import LIFT, R3, SurfaceMesh, extract_surface, integrate_frame, real_frame_conjugate, validate_surface
from .geometry import alpha_loops, geometry, random_point, symmetry_defects, twist_gauge, tzitzeica_residual
from .pde import GoursatData, cell_residual, solve_elliptic, solve_hyperbolic

MODES = ("solve", "lax-check", "integrate", "dpw", "classify")
DEFAULT_TOL = {
    "defect": 1e-6,      # surface validation
    "residual": 1e-8,    # PDE residual
    "path": 1e-6,        # path independence of the frame
    "symmetry": 1e-12,   # Lax pair twist/reality
    "matching": 1e-9,    # C1 L+ = C2 L- in the asymptotic construction
}
# loop splitting adds its own error on top of the frame integration
MODE_TOL = {"dpw": {"defect": 1e-5}}
DEFAULT_TRUNC = 24


@dataclass
class PipelineConfig:
    mode: str
    geometry: str | None = None
    grid: Grid | None = None
    data: dict = field(default_factory=dict)
    potential: dict | None = None
    lambdas: tuple = (1.0,)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOL))
    outputs: dict = field(default_factory=dict)
    classify: dict = field(default_factory=dict)
    trunc: int = DEFAULT_TRUNC
    seed: int = 0
    samples: int = 100


# -- config parsing --------------------------------------------------------------

def _number(x, name):
    if isinstance(x, bool):
        raise ConfigError(name, "expected a number")
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        return complex(x[0], x[1])
    raise ConfigError(name, f"expected a number or [re, im], got {x!r}")


def _sampler(spec, name, default_var="z"):
    """A number, [re, im], or {"coeffs": [...], "var": "z"|"a"|"b"}."""
    if spec is None:
        return None
    if isinstance(spec, dict):
        var = spec.get("var", default_var)
        if var not in ("z", "a", "b"):
            raise ConfigError(f"{name}.var", f"unknown variable {var!r}")
        coeffs = spec.get("coeffs")
        if not isinstance(coeffs, list) or not coeffs:
            raise ConfigError(f"{name}.coeffs", "expected a nonempty list")
        return Poly([_number(c, f"{name}.coeffs") for c in coeffs], var)
    return Poly([_number(spec, name)], default_var)


def _poly1(coeffs, name):
    cs = [_number(c, name) for c in coeffs]
    return lambda t: np.polyval(cs[::-1], np.asarray(t, dtype=complex))


def _potential_part(spec, name):
    """{"degree": {"ij": coeffs}} -> {degree: callable t -> (..., 3, 3)}; entries
    are 1-based row/column digits and polynomials in the potential variable."""
    if not isinstance(spec, dict) or not spec:
        raise ConfigError(name, "expected a nonempty mapping degree -> entries")
    out = {}
    for deg, entries in spec.items():
        try:
            d = int(deg)
        except ValueError:
            raise ConfigError(f"{name}.{deg}", "degree must be an integer") from None
        polys = []
        for ij, coeffs in entries.items():
            if len(ij) != 2 or not set(ij) <= set("123"):
                raise ConfigError(f"{name}.{deg}.{ij}", "entry key must be two digits in 1..3")
            polys.append((int(ij[0]) - 1, int(ij[1]) - 1, _poly1(coeffs, f"{name}.{deg}.{ij}")))

        def coeff(t, polys=polys):
            t = np.asarray(t, dtype=complex)
            m = np.zeros(t.shape + (3, 3), dtype=complex)
            for i, j, p in polys:
                m[..., i, j] = p(t)
            return m

        out[d] = coeff
    return out


def _grid(spec) -> Grid:
    if not isinstance(spec, dict):
        raise ConfigError("grid", "expected an object with origin, spacing, dims")
    dims = spec.get("dims")
    if (not isinstance(dims, list) or len(dims) != 2
            or not all(isinstance(n, int) and not isinstance(n, bool) for n in dims)):
        raise ConfigError("grid.dims", "expected two integers")
    if min(dims) < 3:
        raise ConfigError("grid.dims", f"need at least 3 points per side, got {dims}")
    origin = spec.get("origin", [0.0, 0.0])
    spacing = spec.get("spacing")
    if spacing is None:
        spacing = [1.0 / (dims[0] - 1), 1.0 / (dims[1] - 1)]
    if len(origin) != 2:
        raise ConfigError("grid.origin", "expected two numbers")
    if len(spacing) != 2 or min(spacing) <= 0:
        raise ConfigError("grid.spacing", "expected two positive numbers")
    return Grid((float(origin[0]), float(origin[1])), (float(spacing[0]), float(spacing[1])), tuple(dims))


def parse_config(raw: dict, trunc: int | None = None, tol: float | None = None) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
    cfg = PipelineConfig(mode)
    if mode != "classify":
        tag = raw.get("geometry")
        if tag not in alg.TAGS:
            raise ConfigError("geometry", f"expected one of {', '.join(alg.TAGS)}, got {tag!r}")
        cfg.geometry = tag
    if mode in ("solve", "integrate", "dpw"):
        if "grid" not in raw:
            raise ConfigError("grid", "required for this mode")
        cfg.grid = _grid(raw["grid"])
    cfg.data = dict(raw.get("data", {}))
    if mode == "dpw":
        if "potential" not in raw:
            raise ConfigError("potential", "required for dpw")
        cfg.potential = raw["potential"]
    lams = raw.get("lambda", [1.0])
    cfg.lambdas = tuple(_number(l, "lambda") for l in (lams if isinstance(lams, list) else [lams]))
    if any(l == 0 for l in cfg.lambdas):
        raise ConfigError("lambda", "lambda must be nonzero")
    tols = dict(DEFAULT_TOL, **MODE_TOL.get(mode, {}))
    for k, v in raw.get("tolerances", {}).items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"tolerances.{k}", "must be a positive number")
        tols[k] = float(v)
    if tol is not None:
        if not tol > 0:
            raise ConfigError("tol", "must be positive")
        tols["defect"] = float(tol)
    cfg.tolerances = tols
    cfg.outputs = dict(raw.get("outputs", {}))
    cfg.classify = dict(raw.get("classify", {}))
    cfg.trunc = int(trunc if trunc is not None else raw.get("trunc", DEFAULT_TRUNC))
    if cfg.trunc < 1:
        raise ConfigError("trunc", "must be a positive integer")
    cfg.seed = int(raw.get("seed", 0))
    cfg.samples = int(raw.get("samples", 100))
    return cfg


# -- deterministic writers -------------------------------------------------------

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    return "0" if s == "-0" else s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats at 17 significant digits and insertion-ordered keys."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps([float(obj.real), float(obj.imag)], indent, _level)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_atomic(path: str, text: str) -> str:
    """Write via a temp file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def chart_projection(mesh: SurfaceMesh, tol: float = 1e-12) -> SurfaceMesh:
    """Affine chart w = (f1/f3, f2/f3) of a homogeneous lift, shown in R^3 as
    (Re w1, Im w1, Re w2)."""
    if mesh.representation != LIFT:
        return mesh
    f = mesh.samples
    f3 = f[..., 2]
    bad = np.abs(f3) <= tol * np.max(np.abs(f))
    if np.any(bad):
        idx = [tuple(int(v) for v in ij) for ij in np.argwhere(bad)]
        raise UnsupportedRepresentation(f"third homogeneous coordinate vanishes at {len(idx)} samples", idx)
    w = f[..., :2] / f3[..., None]
    pts = np.stack([w[..., 0].real, w[..., 0].imag, w[..., 1].real], axis=-1)
    return SurfaceMesh(pts, mesh.grid, mesh.tag, R3, mesh.lam, mesh.mask)


def mesh_obj(mesh: SurfaceMesh) -> str:
    if mesh.representation != R3:
        raise UnsupportedRepresentation("homogeneous lift needs a chart projection before OBJ export")
    na, nb = mesh.grid.dims
    pts = np.real(mesh.samples)
    lines = [f"# {mesh.tag} surface, {na}x{nb} grid"]
    for i in range(na):
        for j in range(nb):
            x, y, z = pts[i, j]
            lines.append(f"v {_fmt_float(x)} {_fmt_float(y)} {_fmt_float(z)}")
    ok = np.ones((na, nb), bool) if mesh.mask is None else np.asarray(mesh.mask, bool)
    for i in range(na - 1):
        for j in range(nb - 1):
            if ok[i, j] and ok[i + 1, j] and ok[i + 1, j + 1] and ok[i, j + 1]:
                k = i * nb + j + 1
                lines.append(f"f {k} {k + nb} {k + nb + 1} {k + 1}")
    return "\n".join(lines) + "\n"


def mesh_csv(mesh: SurfaceMesh) -> str:
    a, b = mesh.grid.a, mesh.grid.b
    na, nb = mesh.grid.dims
    if mesh.representation == R3:
        rows = ["u,v,x,y,z"]
        pts = np.real(mesh.samples)
        for i in range(na):
            for j in range(nb):
                rows.append(",".join(_fmt_float(v) for v in (a[i], b[j], *pts[i, j])))
    else:
        rows = ["u,v,re1,im1,re2,im2,re3,im3"]
        f = mesh.samples
        for i in range(na):
            for j in range(nb):
                vals = [a[i], b[j]]
                for c in f[i, j]:
                    vals += [c.real, c.imag]
                rows.append(",".join(_fmt_float(v) for v in vals))
    return "\n".join(rows) + "\n"


def export_mesh(mesh: SurfaceMesh, fmt: str, path: str, chart: bool = False) -> str:
    fmt = fmt.upper()
    if fmt == "OBJ":
        m = chart_projection(mesh) if chart else mesh
        return write_atomic(path, mesh_obj(m))
    if fmt == "CSV":
        return write_atomic(path, mesh_csv(mesh))
    raise ValueError(f"unknown mesh format {fmt!r}")


# -- pipelines -------------------------------------------------------------------

@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except TodaError as e:
        e.stage = name
        raise
    finally:
        timings[name] = time.perf_counter() - t0


def _gate(gates: dict, name: str, value: float, tol: float):
    gates[name] = {"value": float(value), "tol": float(tol), "passed": bool(value <= tol)}


def _solve_omega(cfg: PipelineConfig, geom, Q, R):
    grid = cfg.grid
    if geom.conformal:
        bnd = cfg.data.get("boundary")
        boundary = None if bnd is None else float(_number(bnd, "data.boundary").real) * np.ones(grid.dims)
        return solve_elliptic(geom, Q, boundary, grid, tol=min(cfg.tolerances["residual"], 1e-10))
    gs = cfg.data.get("goursat", {})
    u = _poly1(gs.get("u", [0.0]), "data.goursat.u")(grid.a).real
    v = _poly1(gs.get("v", [0.0]), "data.goursat.v")(grid.b).real
    v = v - v[0] + u[0]
    return solve_hyperbolic(geom, Q, R, GoursatData(u, v), grid, corrector_tol=1e-14)


def _QR(cfg, geom):
    d = cfg.data
    if geom.conformal:
        return _sampler(d.get("Q", 1.0), "data.Q", "z"), None
    default = 1j if geom.tag == "CH21" else 1.0
    Q = _sampler(d.get("Q", default), "data.Q", "a")
    R = _sampler(d.get("R", -1j if geom.tag == "CH21" else 1.0), "data.R", "b")
    return Q, R


def _pde_residual(geom, omega, Q, R):
    if geom.conformal:
        return float(np.max(np.abs(tzitzeica_residual(geom, omega, Q, R).values[1:-1, 1:-1])))
    return cell_residual(geom, omega, Q, R)


def _run_solve(cfg, summary, gates, timings, out):
    geom = geometry(cfg.geometry)
    Q, R = _QR(cfg, geom)
    with _stage("pde", timings):
        omega = _solve_omega(cfg, geom, Q, R)
    res = _pde_residual(geom, omega, Q, R)
    summary["omega"] = {"min": float(omega.values.min()), "max": float(omega.values.max())}
    if "iterations" in omega.info:
        summary["newton_iterations"] = omega.info["iterations"]
    _gate(gates, "pde_residual", res, cfg.tolerances["residual"])
    if cfg.outputs.get("csv", True):
        rfield = tzitzeica_residual(geom, omega, Q, R).values
        a, b = cfg.grid.a, cfg.grid.b
        rows = ["u,v,omega,residual"]
        for i in range(len(a)):
            for j in range(len(b)):
                rows.append(",".join(_fmt_float(x) for x in (a[i], b[j], omega.values[i, j], rfield[i, j])))
        summary["files"]["table"] = os.path.basename(write_atomic(os.path.join(out, "residuals.csv"), "\n".join(rows) + "\n"))


def _run_lax_check(cfg, summary, gates, timings, out):
    geom = geometry(cfg.geometry)
    rng = np.random.default_rng(cfg.seed)
    D = twist_gauge(geom.tag)
    twist = real = loop = 0.0
    with _stage("lax", timings):
        for _ in range(cfg.samples):
            p = random_point(geom, rng)
            t, r = symmetry_defects(geom, p)
            twist, real = max(twist, t), max(real, r)
            for L in alpha_loops(geom, p, cfg.trunc):
                L = alg.LaurentLoop(D @ L.coeffs @ D.conj().T, L.N, True)
                loop = max(loop, alg.twist_check(L))
    summary["samples"] = cfg.samples
    _gate(gates, "twist", twist, cfg.tolerances["symmetry"])
    _gate(gates, "reality", real, cfg.tolerances["symmetry"])
    _gate(gates, "loop_twist", loop, cfg.tolerances["symmetry"])


def _write_mesh(cfg, mesh, summary, out):
    if not cfg.outputs.get("mesh", True):
        return
    if mesh.representation == R3:
        summary["files"]["mesh"] = os.path.basename(export_mesh(mesh, "OBJ", os.path.join(out, "mesh.obj")))
    elif cfg.outputs.get("chart", False):
        summary["files"]["mesh"] = os.path.basename(export_mesh(mesh, "OBJ", os.path.join(out, "mesh.obj"), chart=True))
    else:
        summary["files"]["mesh"] = os.path.basename(export_mesh(mesh, "CSV", os.path.join(out, "mesh.csv")))
    summary["vertices"] = int(np.prod(mesh.grid.dims))


def _report(summary, gates, report, tol):
    for k, v in report.defects.items():
        _gate(gates, k, v, tol)
    summary["validation"] = {k: float(v) for k, v in report.defects.items()}


def _run_integrate(cfg, summary, gates, timings, out):
    geom = geometry(cfg.geometry)
    Q, R = _QR(cfg, geom)
    src = cfg.data.get("omega", "zero")
    if src == "zero":
        omega = ScalarField(np.zeros(cfg.grid.dims), cfg.grid)
    elif src == "solve":
        with _stage("pde", timings):
            omega = _solve_omega(cfg, geom, Q, R)
        _gate(gates, "pde_residual", _pde_residual(geom, omega, Q, R), cfg.tolerances["residual"])
    else:
        raise ConfigError("data.omega", "expected 'zero' or 'solve'")
    lam = cfg.lambdas[0]
    # a marched solution is certified by its cell residual (gated above); the
    # pointwise pre-check only applies to fields that were not solved here
    pre = None if src == "solve" and not geom.conformal else cfg.tolerances.get("pre_residual", 1e-3)
    with _stage("frame", timings):
        F = integrate_frame(geom, omega, Q, R, lam, residual_threshold=pre)
    with _stage("surface", timings):
        mesh = extract_surface(geom, F)
        report = validate_surface(geom, mesh, omega, Q, R, tol=cfg.tolerances["defect"])
    _gate(gates, "path_defect", F.info["path_defect"], cfg.tolerances["path"])
    summary["det_drift"] = F.info["det_drift"]
    if geom.tag in ("AffDefEll", "AffDefHyp"):
        summary["imaginary_residue"] = real_frame_conjugate(geom, F).info["imaginary_residue"]
    _report(summary, gates, report, cfg.tolerances["defect"])
    _write_mesh(cfg, mesh, summary, out)


def _run_dpw(cfg, summary, gates, timings, out):
    geom = geometry(cfg.geometry)
    Q, R = _QR(cfg, geom)
    if "Q" not in cfg.data:
        Q = R = None
    spec = cfg.potential
    kind = spec.get("kind", "conformal" if geom.conformal else "asymptotic")
    eta = _potential_part(spec.get("eta"), "potential.eta")
    eta2 = _potential_part(spec.get("eta2"), "potential.eta2") if kind == "asymptotic" else None
    try:
        pot = Potential(eta, kind, eta2, geom.involution)
    except ValueError as e:
        raise ConfigError("potential", str(e)) from None
    M = 4 * cfg.trunc
    with _stage("dpw", timings):
        if kind == "conformal":
            res = dpw_conformal(pot, geom, cfg.grid, Q, cfg.lambdas, M=M)
        else:
            res = dpw_asymptotic(pot, geom, cfg.grid, Q, R, cfg.lambdas, M=M)
    masked = np.argwhere(~res.mask)
    summary["masked"] = {"count": int(masked.shape[0]), "indices": [[int(i), int(j)] for i, j in masked]}
    if "matching_defect" in res.info:
        _gate(gates, "matching", res.info["matching_defect"], cfg.tolerances["matching"])
    _report(summary, gates, res.report, cfg.tolerances["defect"])
    _write_mesh(cfg, res.mesh, summary, out)


def _run_classify(cfg, summary, gates, timings, out):
    c = cfg.classify
    family, relation = c.get("family"), c.get("relation")
    if family not in realforms.FAMILIES:
        raise ConfigError("classify.family", f"expected one of {realforms.FAMILIES}")
    if relation not in realforms.RELATIONS:
        raise ConfigError("classify.relation", f"expected one of {realforms.RELATIONS}")
    sc = realforms.SearchConfig()
    kw = {}
    if "phase_order" in c:
        kw["phase_order"] = int(c["phase_order"])
    if "magnitudes" in c:
        kw["magnitudes"] = tuple(float(m) for m in c["magnitudes"])
    sc = realforms.SearchConfig(**kw) if kw else sc
    with _stage("classify", timings):
        found = realforms.classify_involutions(family, relation, sc)
    summary["family"], summary["relation"] = family, relation
    summary["canonical"] = [
        {"label": f.label, "parameter": f.parameter, "matrix": realforms.matrix_entries(f.matrix)} for f in found
    ]
    matched = {}
    for tag, cand in realforms.geometry_classes().items():
        if (cand.family, cand.relation) == (family, relation):
            matched[tag] = any(realforms.same_class(cand, f) for f in found)
    summary["geometry_matches"] = matched
    _gate(gates, "unmatched_geometries", float(sum(not v for v in matched.values())), 0.5)


_RUNNERS = {
    "solve": _run_solve,
    "lax-check": _run_lax_check,
    "integrate": _run_integrate,
    "dpw": _run_dpw,
    "classify": _run_classify,
}


def run_pipeline(cfg: PipelineConfig, out: str = ".") -> tuple[int, dict]:
    """Run one pipeline, write summary.json and timings.json under out and
    return (exit status, summary).  Status 0 iff every gate passed."""
    os.makedirs(out, exist_ok=True)
    summary = {"mode": cfg.mode}
    if cfg.geometry:
        summary["geometry"] = cfg.geometry
    if cfg.grid is not None:
        summary["grid"] = {"origin": list(cfg.grid.origin), "spacing": list(cfg.grid.spacing), "dims": list(cfg.grid.dims)}
    summary["files"] = {}
    gates, timings = {}, {}
    t0 = time.perf_counter()
    _RUNNERS[cfg.mode](cfg, summary, gates, timings, out)
    timings["total"] = time.perf_counter() - t0
    summary["gates"] = gates
    summary["passed"] = all(g["passed"] for g in gates.values())
    summary["files"]["summary"] = "summary.json"
    write_atomic(os.path.join(out, "summary.json"), dumps(summary) + "\n")
    write_atomic(os.path.join(out, "timings.json"), dumps(timings) + "\n")
    return (0 if summary["passed"] else 1), summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="toda", description="A2(2) Toda surfaces: PDE, frames, DPW and real forms")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="JSON config path")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--trunc", type=int, default=None, help="Laurent truncation N")
    ap.add_argument("--tol", type=float, default=None, help="surface validation tolerance")
    args = ap.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"toda: cannot read config: {e}", file=sys.stderr)
        return 2
    raw = dict(raw, mode=args.mode) if isinstance(raw, dict) else raw
    try:
        cfg = parse_config(raw, args.trunc, args.tol)
        status, summary = run_pipeline(cfg, args.out)
    except ConfigError as e:
        print(f"toda: config error: {e}", file=sys.stderr)
        return 2
    except TodaError as e:
        stage = getattr(e, "stage", cfg.mode)
        print(f"toda {args.mode}: {stage}: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    failed = [k for k, g in summary["gates"].items() if not g["passed"]]
    print(f"toda {args.mode}: {'ok' if status == 0 else 'FAILED ' + ', '.join(failed)}")
    return status


if __name__ == "__main__":
    sys.exit(main())
