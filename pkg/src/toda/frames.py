"""Extended frames: RK4 integration of dF = F alpha, surface extraction and
geometric validators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import algebra as alg
from .errors import GridTooSmall, ImaginaryResidue, NonUnitDeterminant, ResidualTooLarge
from .fields import Grid, ScalarField, apply_stencil, central_weights
from .geometry import GeometrySpec, PointData, build_alpha, check_reality, sample_QR, tzitzeica_residual

R3 = "R3"
LIFT = "lift"


@dataclass
class FrameField:
    frames: np.ndarray  # (na, nb, 3, 3)
    grid: Grid
    lam: complex
    tag: str
    base_index: tuple = (0, 0)
    base_value: np.ndarray = field(default_factory=lambda: alg.ID3.copy())
    info: dict = field(default_factory=dict)

    def at(self, i: int, j: int) -> np.ndarray:
        return self.frames[i, j]


@dataclass
class SurfaceMesh:
    samples: np.ndarray  # (na, nb, 3)
    grid: Grid
    tag: str
    representation: str = R3
    lam: complex = 1.0
    mask: np.ndarray | None = None


# -- connection sampling -------------------------------------------------------

class _Smooth:
    """Spline view of omega giving values and first partials anywhere."""

    def __init__(self, omega: ScalarField):
        na, nb = omega.dims
        g = omega.grid
        self.spl = RectBivariateSpline(g.a, g.b, omega.values, kx=min(3, na - 1), ky=min(3, nb - 1), s=0)

    def __call__(self, a, b):
        ev = self.spl.ev
        return ev(a, b), ev(a, b, dx=1), ev(a, b, dx=0, dy=1)


def connection(geom: GeometrySpec, omega: ScalarField, Q, R, lam):
    """Callable (a, b) -> (A_a, A_b), the coefficients of alpha = A_a da + A_b db
    in the real grid coordinates."""
    smooth = _Smooth(omega)

    def A(a, b):
        w, wa, wb = smooth(a, b)
        Qv, Rv = sample_QR(geom, Q, R, a, b)
        if geom.conformal:
            wz = 0.5 * (wa - 1j * wb)
            p = PointData(w, wz, np.conj(wz), Qv, Rv)
            U, V = build_alpha(geom, p, lam, check=False)
            return U + V, 1j * (U - V)
        p = PointData(w, wa, wb, Qv, Rv)
        return build_alpha(geom, p, lam, check=False)

    return A


def _rk4_line(F0, A, fixed, coords, axis, substeps=1):
    """March F along coords (1D, may be decreasing) with the other coordinate
    given by the array `fixed`, taking `substeps` RK4 steps per spacing.
    Returns frames at every coord, shape (len(coords),) + F0.shape, and the
    worst determinant drift."""
    out = np.empty((len(coords),) + F0.shape, dtype=complex)
    out[0] = F = F0
    drift = 0.0

    def slope(F, s):
        pa, pb = (np.full_like(fixed, s), fixed) if axis == 0 else (fixed, np.full_like(fixed, s))
        return F @ A(pa, pb)[axis]

    for n in range(1, len(coords)):
        h = (coords[n] - coords[n - 1]) / substeps
        for m in range(substeps):
            s = coords[n - 1] + m * h
            k1 = slope(F, s)
            k2 = slope(F + 0.5 * h * k1, s + 0.5 * h)
            k3 = slope(F + 0.5 * h * k2, s + 0.5 * h)
            k4 = slope(F + h * k3, s + h)
            F = F + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        d = np.linalg.det(F)
        drift = max(drift, float(np.max(np.abs(d - 1))))
        F = F / (d ** (1.0 / 3.0))[..., None, None]
        out[n] = F
    return out, drift


def _sweep(F0, A, grid: Grid, i0: int, j0: int, first_axis: int, substeps: int = 1):
    a, b = grid.a, grid.b
    na, nb = grid.dims
    frames = np.empty((na, nb, 3, 3), dtype=complex)
    drift = 0.0
    F0 = F0[None]
    if first_axis == 0:
        line = np.empty((na, 3, 3), dtype=complex)
        for sl, coords in ((slice(i0, None), a[i0:]), (slice(i0, None, -1) if i0 else slice(0, 1), a[i0::-1])):
            vals, d = _rk4_line(F0, A, np.array([b[j0]]), coords, 0, substeps)
            line[sl] = vals[:, 0]
            drift = max(drift, d)
        # every column from the first line
        up, d1 = _rk4_line(line, A, a, b[j0:], 1, substeps)
        down, d2 = _rk4_line(line, A, a, b[j0::-1], 1, substeps)
        frames[:, j0:] = np.moveaxis(up, 0, 1)
        frames[:, j0::-1] = np.moveaxis(down, 0, 1)
    else:
        line = np.empty((nb, 3, 3), dtype=complex)
        for sl, coords in ((slice(j0, None), b[j0:]), (slice(j0, None, -1) if j0 else slice(0, 1), b[j0::-1])):
            vals, d = _rk4_line(F0, A, np.array([a[i0]]), coords, 1, substeps)
            line[sl] = vals[:, 0]
            drift = max(drift, d)
        right, d1 = _rk4_line(line, A, b, a[i0:], 0, substeps)
        left, d2 = _rk4_line(line, A, b, a[i0::-1], 0, substeps)
        frames[i0:] = right
        frames[i0::-1] = left
    return frames, max(drift, d1, d2)


def integrate_frame(
    geom: GeometrySpec,
    omega: ScalarField,
    Q,
    R=None,
    lam=1.0,
    base=None,
    base_index=(0, 0),
    residual_threshold: float | None = 1e-3,
    det_tol: float = 1e-6,
    path_check: bool = True,
    substeps: int = 1,
) -> FrameField:
    """Solve dF = F alpha^lam with F(base_index) = base.

    The frame is marched along the first grid line in a and then up and down
    every column in b (RK4 with `substeps` steps per grid spacing, det
    renormalised at each node).  info["path_defect"] is the largest
    difference against the b-first order.  residual_threshold=None skips the Tzitzeica pre-check.
    """
    lam = complex(lam)
    if lam == 0:
        raise alg.ZeroLambda("lambda must be nonzero")
    grid = omega.grid
    A0, B0 = grid.mesh()
    Qv, Rv = sample_QR(geom, Q, R, A0, B0)
    check_reality(geom, PointData(0.0, 0.0, 0.0, Qv, Rv))
    info = {}
    if residual_threshold is not None:
        # interior points: the boundary carries Dirichlet/Goursat data
        res = tzitzeica_residual(geom, omega, Q, R).values[1:-1, 1:-1]
        rmax = float(np.max(np.abs(res)))
        info["tzitzeica_residual"] = rmax
        if rmax > residual_threshold:
            raise ResidualTooLarge(f"Tzitzeica residual {rmax:.3e} above {residual_threshold:.1e}")
    base = alg.ID3.copy() if base is None else alg.as_mat3(base)
    A = connection(geom, omega, Q, R, lam)
    i0, j0 = base_index
    frames, drift = _sweep(base, A, grid, i0, j0, 0, substeps)
    info["det_drift"] = drift
    if drift > det_tol:
        raise NonUnitDeterminant(f"determinant drift {drift:.3e} above {det_tol:.1e}")
    if path_check:
        other, d2 = _sweep(base, A, grid, i0, j0, 1, substeps)
        info["path_defect"] = float(np.max(alg.norm(frames - other)))
        info["det_drift"] = max(drift, d2)
    return FrameField(frames, grid, lam, geom.tag, tuple(base_index), base, info)


# -- real frames and surfaces --------------------------------------------------

def real_frame_matrix(tag: str) -> np.ndarray:
    """T with T^-1 conj(T) equal to the definite-affine conjugator, so that
    T F T^-1 is real whenever F is fixed by the group involution."""
    s = {"AffDefEll": 1j, "AffDefHyp": 1.0}[tag]
    r = 1 / np.sqrt(2)
    return np.array([[r, r, 0], [1j * r, -1j * r, 0], [0, 0, s]], dtype=complex)


def real_frame_conjugate(geom: GeometrySpec, F: FrameField, tol: float = 1e-8) -> FrameField:
    if geom.tag not in ("AffDefEll", "AffDefHyp"):
        raise ValueError("real-frame conjugation applies to definite affine tags")
    T = real_frame_matrix(geom.tag)
    out = T @ F.frames @ np.linalg.inv(T)
    resid = float(np.max(np.abs(out.imag)))
    if resid > tol:
        raise ImaginaryResidue(f"real frame has imaginary residue {resid:.3e}")
    info = dict(F.info, imaginary_residue=resid)
    return FrameField(out.real.astype(complex), F.grid, F.lam, F.tag, F.base_index, T @ F.base_value @ np.linalg.inv(T), info)


def hermitian(x, y, S):
    """<x, y> = x^T S conj(y) over the last axis."""
    return np.einsum("...i,ij,...j->...", x, S, np.conj(y))


def extract_surface(geom: GeometrySpec, F: FrameField) -> SurfaceMesh:
    """Affine tags: real position in R^3 (proper spheres have f = -xi/H).
    Lagrangian tags: the third column as a lift, normalised per signature."""
    if geom.tag == "AffIndef":
        f = F.frames[..., :, 2]
        return SurfaceMesh(f.real.copy(), F.grid, geom.tag, R3, F.lam)
    if geom.tag in ("AffDefEll", "AffDefHyp"):
        xi = real_frame_conjugate(geom, F).frames[..., :, 2].real
        return SurfaceMesh(-xi / geom.H, F.grid, geom.tag, R3, F.lam)
    f = F.frames[..., :, 2]
    n = np.sqrt(np.abs(hermitian(f, f, geom.signature)))
    return SurfaceMesh(f / n[..., None], F.grid, geom.tag, LIFT, F.lam)


# -- validation ----------------------------------------------------------------

_HALF = 4


class _Partials:
    """High-order central partials of an array field on the interior
    (4 points trimmed on every side).  1st/2nd derivatives are eighth order,
    3rd derivatives sixth order."""

    def __init__(self, f: np.ndarray, ha: float, hb: float):
        if f.shape[0] < 2 * _HALF + 1 or f.shape[1] < 2 * _HALF + 1:
            raise GridTooSmall(f"validation needs at least {2 * _HALF + 1} points per side")
        self.f, self.ha, self.hb = f, ha, hb
        self.w = {k: central_weights(k, _HALF) for k in (1, 2, 3)}
        self.cache = {}

    def __call__(self, na: int, nb: int) -> np.ndarray:
        key = (na, nb)
        if key not in self.cache:
            g = self.f
            g = apply_stencil(g, self.w[na], self.ha, 0, na) if na else g[_HALF:-_HALF]
            g = apply_stencil(g, self.w[nb], self.hb, 1, nb) if nb else g[:, _HALF:-_HALF]
            self.cache[key] = g
        return self.cache[key]


def _z_partials(P: _Partials):
    """f_z, f_zbar, f_zzbar, f_zz, f_zzz from x/y partials."""
    fz = 0.5 * (P(1, 0) - 1j * P(0, 1))
    fzb = 0.5 * (P(1, 0) + 1j * P(0, 1))
    fzzb = 0.25 * (P(2, 0) + P(0, 2))
    fzz = 0.25 * (P(2, 0) - 2j * P(1, 1) - P(0, 2))
    fzzz = 0.125 * (P(3, 0) - 3j * P(2, 1) - 3 * P(1, 2) + 1j * P(0, 3))
    return fz, fzb, fzzb, fzz, fzzz


def _det3(a, b, c):
    return np.linalg.det(np.stack([a, b, c], axis=-1))


@dataclass
class ValidationReport:
    defects: dict
    tolerances: dict
    recovered: dict = field(default_factory=dict)

    @property
    def passed(self) -> dict:
        return {k: bool(v <= self.tolerances.get(k, np.inf)) for k, v in self.defects.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def _interior(x):
    return np.asarray(x)[_HALF:-_HALF, _HALF:-_HALF]


def _mx(x, mask=None):
    x = np.abs(np.asarray(x))
    if mask is not None:
        x = x[mask]
    return float(np.max(x)) if x.size else 0.0


def validate_surface(
    geom: GeometrySpec,
    mesh: SurfaceMesh,
    omega: ScalarField,
    Q=None,
    R=None,
    tol: float = 1e-5,
) -> ValidationReport:
    """Check the defining identities of the surface class on interior points.

    Q, R are the input samplers of the frame; the associated-family scaling
    lam^-3 Q, lam^3 R is applied here.  Masked samples (mesh.mask False) are
    excluded from every statistic.
    """
    grid = mesh.grid
    if tuple(omega.dims) != tuple(grid.dims):
        raise ValueError("mesh and omega grids differ")
    ha, hb = grid.spacing
    P = _Partials(mesh.samples, ha, hb)
    w = _interior(omega.values)
    mask = None if mesh.mask is None else _interior(mesh.mask)
    lam = complex(mesh.lam)
    A, B = grid.mesh()
    Qe = Re = None
    if Q is not None:
        Qv, Rv = sample_QR(geom, Q, R, A, B)
        Qe, Re = _interior(Qv) * lam**-3, _interior(Rv) * lam**3
    d, rec = {}, {}

    if geom.tag == "AffIndef":
        fu, fv, fuv = P(1, 0), P(0, 1), P(1, 1)
        f = _interior(mesh.samples)
        vol = _det3(fu, fv, fuv)
        d["metric"] = _mx(vol - np.exp(2 * w), mask)
        d["normal"] = _mx(alg.norm(fuv - np.exp(w)[..., None] * f, axis=-1), mask)
        q2 = _det3(fu, P(2, 0), P(3, 0))
        r2 = _det3(fv, P(0, 2), P(0, 3))
        rec["Q2"], rec["minus_R2"] = q2, r2
        if Qe is not None:
            d["cubic_Q"] = _mx(q2 - Qe**2, mask)
            d["cubic_R"] = _mx(r2 + Re**2, mask)
    elif geom.tag in ("AffDefEll", "AffDefHyp"):
        fz, fzb, fzzb, fzz, fzzz = _z_partials(P)
        f = _interior(mesh.samples)
        vol = _det3(fz, fzb, fzzb)
        d["metric"] = _mx(np.abs(vol) - np.exp(2 * w), mask)
        d["normal"] = _mx(alg.norm(fzzb + geom.H * np.exp(w)[..., None] * f, axis=-1), mask)
        d["real"] = _mx(np.imag(mesh.samples))
        ratio = _det3(fz, fzz, fzzz) / vol
        rec["Q2"] = ratio * np.exp(2 * w)
        if Qe is not None:
            d["cubic_Q"] = _mx(rec["Q2"] - Qe**2, mask)
    else:
        S = geom.signature
        f = _interior(mesh.samples)
        sign = -1.0 if geom.tag in ("CH2", "CH21") else 1.0
        d["norm"] = _mx(hermitian(f, f, S) - sign, mask)
        if geom.conformal:
            fz, fzb, _, _, fzzz = _z_partials(P)
            d["horizontal"] = max(_mx(hermitian(fz, f, S), mask), _mx(hermitian(fzb, f, S), mask))
            d["metric"] = _mx(hermitian(fz, fz, S) - np.exp(w), mask)
            d["orthogonal"] = _mx(hermitian(fz, fzb, S), mask)
            rec["Q"] = hermitian(fzzz, f, S)
            if Qe is not None:
                d["cubic_Q"] = _mx(rec["Q"] - Qe, mask)
        else:
            fu, fv = P(1, 0), P(0, 1)
            d["horizontal"] = max(_mx(hermitian(fu, f, S), mask), _mx(hermitian(fv, f, S), mask))
            d["metric"] = _mx(hermitian(fu, fv, S) - np.exp(w), mask)
            rec["Q"] = hermitian(P(3, 0), f, S)
            rec["R"] = hermitian(P(0, 3), f, S)
            if Qe is not None:
                d["cubic_Q"] = _mx(rec["Q"] - Qe, mask)
                d["cubic_R"] = _mx(rec["R"] - Re, mask)
    return ValidationReport(d, {k: tol for k in d}, rec)
