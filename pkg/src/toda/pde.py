"""Tzitzeica solvers.

Conformal tags: damped Newton on the 5-point discretisation of
    omega_zzbar + N(omega) = forcing,     omega_zzbar = (omega_xx + omega_yy) / 4
with Dirichlet data.  Asymptotic tags: Goursat marching of
    omega_uv + N(omega) = forcing
from the two characteristic lines u = u0 and v = v0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import Blowup, GridTooSmall, NoConvergence, RealityViolation
from .fields import Grid, ScalarField
from .geometry import (
    GeometrySpec,
    PointData,
    check_reality,
    sample_QR,
    tzitzeica_nonlinearity,
    tzitzeica_nonlinearity_prime,
)

__all__ = ["Grid", "ScalarField", "GoursatData", "solve_elliptic", "solve_hyperbolic", "cell_residual", "OVERFLOW_GUARD"]

log = logging.getLogger(__name__)

OVERFLOW_GUARD = 50.0


@dataclass(frozen=True)
class GoursatData:
    """Characteristic data: omega along v = v0 (indexed by u) and along u = u0
    (indexed by v)."""

    omega_on_u_axis: tuple
    omega_on_v_axis: tuple
    tol: float = 1e-12

    def __post_init__(self):
        u = np.asarray(self.omega_on_u_axis, dtype=float)
        v = np.asarray(self.omega_on_v_axis, dtype=float)
        if u.ndim != 1 or v.ndim != 1 or u.size == 0 or v.size == 0:
            raise ValueError("Goursat data must be two non-empty 1D sequences")
        if abs(u[0] - v[0]) > self.tol:
            raise ValueError(f"Goursat corner mismatch: {u[0]} vs {v[0]}")
        object.__setattr__(self, "omega_on_u_axis", tuple(u))
        object.__setattr__(self, "omega_on_v_axis", tuple(v))

    @classmethod
    def zeros(cls, nu: int, nv: int) -> "GoursatData":
        return cls((0.0,) * nu, (0.0,) * nv)

    @classmethod
    def from_function(cls, fn, grid: Grid) -> "GoursatData":
        a, b = grid.a, grid.b
        return cls(tuple(fn(a, np.full_like(a, b[0]))), tuple(fn(np.full_like(b, a[0]), b)))


def _forcing_values(forcing, grid: Grid):
    if forcing is None:
        return np.zeros(grid.dims)
    if isinstance(forcing, ScalarField):
        if tuple(forcing.dims) != tuple(grid.dims):
            raise ValueError("forcing grid does not match")
        return forcing.values
    if callable(forcing):
        A, B = grid.mesh()
        return np.real(np.asarray(forcing(A, B), dtype=complex))
    f = np.asarray(forcing, dtype=float)
    if f.shape != tuple(grid.dims):
        raise ValueError("forcing shape does not match grid")
    return f


def _QR_product(geom: GeometrySpec, Q, R, A, B):
    Qv, Rv = sample_QR(geom, Q, R, A, B)
    if not geom.conformal:
        check_reality(geom, PointData(0.0, 0.0, 0.0, Qv, Rv))
    return Qv, Rv


# -- elliptic ------------------------------------------------------------------

def _laplace_quarter(nx: int, ny: int, hx: float, hy: float) -> sp.csr_matrix:
    """(D_xx + D_yy)/4 on the interior unknowns, Dirichlet rows eliminated."""
    def d2(n, h):
        e = np.ones(n)
        return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1]) / h**2
    Ix, Iy = sp.identity(nx), sp.identity(ny)
    return (0.25 * (sp.kron(d2(nx, hx), Iy) + sp.kron(Ix, d2(ny, hy)))).tocsr()


def _boundary_values(boundary, grid: Grid) -> np.ndarray:
    if boundary is None:
        return np.zeros(grid.dims)
    if isinstance(boundary, ScalarField):
        return boundary.values.copy()
    if callable(boundary):
        A, B = grid.mesh()
        return np.asarray(np.real(boundary(A, B)), dtype=float)
    vals = np.asarray(boundary, dtype=float)
    if vals.shape != tuple(grid.dims):
        raise ValueError("boundary shape does not match grid")
    return vals.copy()


def solve_elliptic(
    geom: GeometrySpec,
    Q,
    boundary=None,
    grid: Grid | None = None,
    forcing=None,
    tol: float = 1e-10,
    max_iter: int = 50,
    initial=None,
) -> ScalarField:
    """Damped Newton for omega_zzbar + N(omega) = forcing with Dirichlet data.

    boundary: ScalarField, full-grid array or callable (only the boundary ring
    is used); zero when omitted.  The returned field carries the residual
    history in info["history"] and the Newton step count in info["iterations"].
    """
    if not geom.conformal:
        raise ValueError(f"{geom.tag} is not a conformal tag")
    if grid is None:
        if isinstance(boundary, ScalarField):
            grid = boundary.grid
        else:
            raise ValueError("a grid is required")
    nx, ny = grid.dims
    if nx < 3 or ny < 3:
        raise GridTooSmall("elliptic solve needs at least 3 points per side")
    hx, hy = grid.spacing
    A, B = grid.mesh()
    Qv, Rv = _QR_product(geom, Q, None, A, B)
    Qi = Qv[1:-1, 1:-1]
    f = _forcing_values(forcing, grid)[1:-1, 1:-1].ravel()

    w = _boundary_values(boundary, grid)
    mi, mj = nx - 2, ny - 2
    L = _laplace_quarter(mi, mj, hx, hy)
    # boundary contribution of the Laplacian, fixed through the iteration
    lift = np.zeros((mi, mj))
    lift[0, :] += w[0, 1:-1] / hx**2
    lift[-1, :] += w[-1, 1:-1] / hx**2
    lift[:, 0] += w[1:-1, 0] / hy**2
    lift[:, -1] += w[1:-1, -1] / hy**2
    lift = 0.25 * lift.ravel()
    if initial is not None:
        w[1:-1, 1:-1] = _boundary_values(initial, grid)[1:-1, 1:-1]
    elif np.any(lift):
        # harmonic extension of the boundary data; zero data starts from 0
        w[1:-1, 1:-1] = spla.spsolve(L.tocsc(), -lift).reshape(mi, mj)
    else:
        w[1:-1, 1:-1] = 0.0

    def F(x):
        return L @ x + lift + tzitzeica_nonlinearity(geom.tag, x.reshape(mi, mj), Qi).ravel() - f

    x = w[1:-1, 1:-1].ravel().copy()
    r = F(x)
    rn = float(np.max(np.abs(r))) if r.size else 0.0
    history = [rn]
    it = 0
    while rn >= tol:
        if it >= max_iter:
            raise NoConvergence(f"elliptic Newton stalled at residual {rn:.3e}", history)
        J = L + sp.diags(tzitzeica_nonlinearity_prime(geom.tag, x.reshape(mi, mj), Qi).ravel())
        dx = spla.spsolve(J.tocsc(), -r)
        t = 1.0
        l2 = float(np.linalg.norm(r))
        while True:
            xn = x + t * dx
            rnew = F(xn)
            if np.all(np.isfinite(rnew)) and np.linalg.norm(rnew) <= (1 - 1e-4 * t) * l2:
                break
            t *= 0.5
            if t < 1e-10:
                raise NoConvergence("line search failed", history)
        x, r = xn, rnew
        rn = float(np.max(np.abs(r)))
        history.append(rn)
        it += 1
        log.debug("newton %d step %.3g residual %.3e", it, t, rn)
    w[1:-1, 1:-1] = x.reshape(mi, mj)
    return ScalarField(w, grid, {"iterations": it, "history": history, "residual": rn})


# -- hyperbolic ----------------------------------------------------------------

def solve_hyperbolic(
    geom: GeometrySpec,
    Q,
    R,
    data: GoursatData,
    grid: Grid,
    forcing=None,
    guard: float = OVERFLOW_GUARD,
    corrector_tol: float | None = None,
) -> ScalarField:
    """March omega_uv = forcing - N(omega) cell by cell from the axes.

    Each cell uses the integral form over [u_i, u_i+1] x [v_j, v_j+1] with the
    trapezoid rule on the four corners.  The missing corner enters through a
    predictor (three-corner average) and one corrector pass; with
    corrector_tol set, the corrector is repeated until the update moves less
    than corrector_tol, so the cell equations hold to that level (see
    cell_residual).  Cells on one anti-diagonal are independent and are
    updated together.
    """
    if geom.conformal:
        raise ValueError(f"{geom.tag} is not an asymptotic tag")
    nu, nv = grid.dims
    if len(data.omega_on_u_axis) != nu or len(data.omega_on_v_axis) != nv:
        raise ValueError("Goursat data lengths do not match grid dims")
    hu, hv = grid.spacing
    A, B = grid.mesh()
    Qv, Rv = _QR_product(geom, Q, R, A, B)
    if np.max(np.abs(Qv - Qv[:, :1])) > 1e-12 or np.max(np.abs(Rv - Rv[:1, :])) > 1e-12:
        raise ValueError("Q must depend on u only and R on v only")
    QR = Qv * Rv
    if np.max(np.abs(QR.imag)) > 1e-12:
        raise RealityViolation("QR must be real")
    f = _forcing_values(forcing, grid)

    w = np.zeros((nu, nv))
    w[:, 0] = data.omega_on_u_axis
    w[0, :] = data.omega_on_v_axis
    if np.max(np.abs(w)) > guard:
        raise Blowup("Goursat data exceeds the overflow guard", (0, 0))
    g = np.zeros((nu, nv))

    def rhs(idx_i, idx_j, vals):
        return f[idx_i, idx_j] - tzitzeica_nonlinearity(geom.tag, vals, QR[idx_i, idx_j], 1.0)

    g[:, 0] = rhs(np.arange(nu), 0, w[:, 0])
    g[0, :] = rhs(0, np.arange(nv), w[0, :])
    hh = hu * hv
    for d in range(2, nu + nv - 1):
        # new corners (i, j) with i + j = d, i >= 1, j >= 1
        i = np.arange(max(1, d - nv + 1), min(nu - 1, d - 1) + 1)
        j = d - i
        base = w[i, j - 1] + w[i - 1, j] - w[i - 1, j - 1]
        g3 = g[i, j - 1] + g[i - 1, j] + g[i - 1, j - 1]
        pred = base + hh * g3 / 3.0
        if not np.all(np.isfinite(pred)) or np.max(np.abs(pred)) > guard:
            k = int(np.argmax(~np.isfinite(pred) | (np.abs(pred) > guard)))
            raise Blowup(f"|omega| exceeded {guard} during marching", (int(i[k]), int(j[k])))
        passes = 0
        while True:
            corr = base + hh * 0.25 * (g3 + rhs(i, j, pred))
            bad = ~np.isfinite(corr) | (np.abs(corr) > guard)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise Blowup(f"|omega| exceeded {guard} during marching", (int(i[k]), int(j[k])))
            passes += 1
            if corrector_tol is None or np.max(np.abs(corr - pred)) < corrector_tol:
                break
            if passes >= 50:
                raise NoConvergence("corrector iteration did not settle")
            pred = corr
        w[i, j] = corr
        g[i, j] = rhs(i, j, corr)
    return ScalarField(w, grid, {"scheme": "trapezoid predictor-corrector"})


def cell_residual(geom: GeometrySpec, omega: ScalarField, Q, R, forcing=None) -> float:
    """Largest defect of the cell equations solved by solve_hyperbolic:
    the mixed difference of omega over each cell minus the trapezoid
    integral of forcing - N(omega), divided by the cell area."""
    grid = omega.grid
    hu, hv = grid.spacing
    A, B = grid.mesh()
    Qv, Rv = _QR_product(geom, Q, R, A, B)
    g = _forcing_values(forcing, grid) - tzitzeica_nonlinearity(geom.tag, omega.values, np.real(Qv * Rv), 1.0)
    w = omega.values
    mixed = (w[1:, 1:] - w[1:, :-1] - w[:-1, 1:] + w[:-1, :-1]) / (hu * hv)
    trap = 0.25 * (g[1:, 1:] + g[1:, :-1] + g[:-1, 1:] + g[:-1, :-1])
    return float(np.max(np.abs(mixed - trap)))
