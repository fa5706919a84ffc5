"""Geometry descriptors, the lambda-families of Maurer-Cartan forms (Lax pairs),
Tzitzeica residuals and twisting/reality diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import algebra as alg
from .errors import GridTooSmall, RealityViolation
from .fields import ScalarField, d1_o2, d2_o2

CONFORMAL = "conformal"
ASYMPTOTIC = "asymptotic"

_KIND = {
    "CP2": CONFORMAL,
    "CH2": CONFORMAL,
    "CH21": ASYMPTOTIC,
    "AffDefEll": CONFORMAL,
    "AffDefHyp": CONFORMAL,
    "AffIndef": ASYMPTOTIC,
}

_SIGNATURE = {"CP2": alg.ID3, "CH2": alg.I21, "CH21": alg.P0}

LAGRANGIAN = ("CP2", "CH2", "CH21")
AFFINE = ("AffDefEll", "AffDefHyp", "AffIndef")


@dataclass(frozen=True)
class GeometrySpec:
    tag: str
    coordinate_kind: str
    involution: alg.InvolutionSpec
    signature: np.ndarray | None
    H: float
    lambda_samples: tuple

    @property
    def conformal(self) -> bool:
        return self.coordinate_kind == CONFORMAL

    @property
    def lagrangian(self) -> bool:
        return self.tag in LAGRANGIAN


def default_lambda_samples(kind: str) -> tuple:
    if kind == CONFORMAL:
        return tuple(np.exp(2j * np.pi * np.arange(16) / 16))
    return (0.5, 1.0, 2.0)


def geometry(tag: str, lambda_samples=None) -> GeometrySpec:
    if tag not in _KIND:
        raise ValueError(f"unknown geometry tag {tag!r}")
    kind = _KIND[tag]
    H = {"AffDefEll": 1.0}.get(tag, -1.0)
    lams = tuple(lambda_samples) if lambda_samples is not None else default_lambda_samples(kind)
    return GeometrySpec(tag, kind, alg.involution_spec(tag), _SIGNATURE.get(tag), H, lams)


@dataclass(frozen=True)
class PointData:
    """Field values at one or many points (arrays broadcast together).

    omega_a, omega_b are the partials along the two coordinates; for conformal
    tags these are omega_z and omega_zbar (complex conjugates of each other).
    R defaults to conj(Q) in conformal cases."""

    omega: object
    omega_a: object
    omega_b: object
    Q: object
    R: object = None

    def resolved_R(self, geom: GeometrySpec):
        if self.R is None:
            if geom.conformal:
                return np.conj(self.Q)
            raise ValueError("asymptotic tags need an explicit R")
        return self.R


def vacuum_point(geom: GeometrySpec) -> PointData:
    if geom.tag == "CH21":
        return PointData(0.0, 0.0, 0.0, 1j, -1j)
    return PointData(0.0, 0.0, 0.0, 1.0, 1.0)


def check_reality(geom: GeometrySpec, p: PointData, tol: float = 1e-12):
    Q = np.asarray(p.Q)
    R = np.asarray(p.resolved_R(geom))
    if geom.tag == "CH21":
        if np.any(np.abs(Q.real) > tol) or np.any(np.abs(R.real) > tol):
            raise RealityViolation("CH21 needs Q and R on the imaginary axis")
    elif geom.tag == "AffIndef":
        if np.any(np.abs(np.imag(Q)) > tol) or np.any(np.abs(np.imag(R)) > tol):
            raise RealityViolation("AffIndef needs real Q and R")


def _zeros(shape):
    return np.zeros(shape + (3, 3), dtype=complex)


def alpha_parts(geom: GeometrySpec, p: PointData, check: bool = True):
    """Graded pieces (U_{-1}, U_0, V_0, V_1) of alpha = U da + V db with
    U = lam^-1 U_{-1} + U_0 and V = V_0 + lam V_1."""
    if check:
        check_reality(geom, p)
    R = p.resolved_R(geom)
    w, wa, wb, Q, R = np.broadcast_arrays(
        np.asarray(p.omega, dtype=float),
        np.asarray(p.omega_a, dtype=complex),
        np.asarray(p.omega_b, dtype=complex),
        np.asarray(p.Q, dtype=complex),
        np.asarray(R, dtype=complex),
    )
    shape = w.shape
    e = np.exp(0.5 * w)
    f = np.exp(-w)
    Um, U0, V0, V1 = (_zeros(shape) for _ in range(4))
    U0[..., 0, 0] = 0.5 * wa
    U0[..., 1, 1] = -0.5 * wa
    V0[..., 0, 0] = -0.5 * wb
    V0[..., 1, 1] = 0.5 * wb
    tag = geom.tag
    if tag in ("CP2", "CH2"):
        s = -1.0 if tag == "CP2" else 1.0
        Um[..., 0, 2] = e
        Um[..., 1, 0] = -Q * f
        Um[..., 2, 1] = s * e
        V1[..., 0, 1] = R * f
        V1[..., 1, 2] = e
        V1[..., 2, 0] = s * e
    elif tag == "CH21":
        Um[..., 0, 2] = e
        Um[..., 1, 0] = -Q * f
        Um[..., 2, 1] = e
        V1[..., 0, 1] = -R * f
        V1[..., 1, 2] = e
        V1[..., 2, 0] = e
    elif tag in ("AffDefEll", "AffDefHyp", "AffIndef"):
        c = 1j if tag == "AffDefEll" else 1.0
        Um[..., 0, 2] = c * e
        Um[..., 1, 0] = Q * f
        Um[..., 2, 1] = c * e
        V1[..., 0, 1] = R * f
        V1[..., 1, 2] = c * e
        V1[..., 2, 0] = c * e
    else:
        raise ValueError(f"unknown geometry tag {tag!r}")
    return Um, U0, V0, V1


def build_alpha(geom: GeometrySpec, p: PointData, lam, check: bool = True):
    """(U, V) of the gauged lambda-family alpha = U da + V db."""
    lam = complex(lam) if np.ndim(lam) == 0 else np.asarray(lam, dtype=complex)[..., None, None]
    if np.any(np.asarray(lam) == 0):
        raise alg.ZeroLambda("lambda must be nonzero")
    Um, U0, V0, V1 = alpha_parts(geom, p, check)
    return Um / lam + U0, V0 + lam * V1


def alpha_loops(geom: GeometrySpec, p: PointData, N: int = 8):
    """U and V as Laurent loops (scalar PointData)."""
    Um, U0, V0, V1 = alpha_parts(geom, p)
    U = alg.LaurentLoop.from_dict({-1: Um, 0: U0}, N, twisted=True)
    V = alg.LaurentLoop.from_dict({0: V0, 1: V1}, N, twisted=True)
    return U, V


def gauge_matrix(geom: GeometrySpec, lam) -> np.ndarray:
    """Constant gauge G(lam) with alpha_gauged = G^-1 alpha_coordinate G."""
    lam = complex(lam)
    if geom.tag == "AffDefEll":
        return np.diag([1j * lam, 1j / lam, 1.0])
    return np.diag([lam, 1 / lam, 1.0])


def coordinate_alpha(geom: GeometrySpec, p: PointData):
    """Maurer-Cartan matrices of the coordinate frame as printed for each
    surface class (lambda = 1, no gauge)."""
    R = p.resolved_R(geom)
    w, wa, wb = float(p.omega), complex(p.omega_a), complex(p.omega_b)
    Q, R = complex(p.Q), complex(R)
    e, f = np.exp(0.5 * w), np.exp(-w)
    tag = geom.tag
    if tag == "CP2":
        U = [[wa / 2, 0, e], [-Q * f, -wa / 2, 0], [0, -e, 0]]
        V = [[-wb / 2, R * f, 0], [0, wb / 2, e], [-e, 0, 0]]
    elif tag == "CH2":
        U = [[wa / 2, 0, e], [-Q * f, -wa / 2, 0], [0, e, 0]]
        V = [[-wb / 2, R * f, 0], [0, wb / 2, e], [e, 0, 0]]
    elif tag == "CH21":
        U = [[wa / 2, 0, e], [-Q * f, -wa / 2, 0], [0, e, 0]]
        V = [[-wb / 2, -R * f, 0], [0, wb / 2, e], [e, 0, 0]]
    elif tag in ("AffDefEll", "AffDefHyp"):
        H = geom.H
        U = [[wa / 2, 0, -H * e], [Q * f, -wa / 2, 0], [0, e, 0]]
        V = [[-wb / 2, R * f, 0], [0, wb / 2, -H * e], [e, 0, 0]]
    else:
        U = [[wa / 2, 0, e], [Q * f, -wa / 2, 0], [0, e, 0]]
        V = [[-wb / 2, R * f, 0], [0, wb / 2, e], [e, 0, 0]]
    return np.array(U, dtype=complex), np.array(V, dtype=complex)


# -- Tzitzeica equations -----------------------------------------------------

def tzitzeica_nonlinearity(tag: str, omega, Q, R=None):
    """Zero-order part N so that the equation reads omega_ab + N = 0
    (omega_ab = omega_zzbar in conformal tags).

    For CH2 both exponential terms carry the same sign: that is what zero
    curvature of the CH2 Lax pair gives (the 1,1 entry of [U, V] is
    e^w + |Q|^2 e^-2w under the SU(2,1) reality condition), and it matches
    the Gauss equation K = -1 - |h|^2/2 of a minimal Lagrangian in CH2.
    """
    omega = np.asarray(omega, dtype=float)
    e1, e2 = np.exp(omega), np.exp(-2 * omega)
    if tag == "CP2":
        return e1 - np.abs(Q) ** 2 * e2
    if tag == "CH2":
        # sign forced by zero curvature of the CH2 Lax pair, see module notes
        return -e1 - np.abs(Q) ** 2 * e2
    if tag == "AffDefHyp":
        return -e1 + np.abs(Q) ** 2 * e2
    if tag == "AffDefEll":
        return e1 + np.abs(Q) ** 2 * e2
    if tag in ("CH21", "AffIndef"):
        return np.real(-e1 + Q * R * e2)
    raise ValueError(f"unknown geometry tag {tag!r}")


def tzitzeica_nonlinearity_prime(tag: str, omega, Q, R=None):
    omega = np.asarray(omega, dtype=float)
    e1, e2 = np.exp(omega), np.exp(-2 * omega)
    if tag == "CP2":
        return e1 + 2 * np.abs(Q) ** 2 * e2
    if tag == "CH2":
        return -e1 + 2 * np.abs(Q) ** 2 * e2
    if tag == "AffDefHyp":
        return -e1 - 2 * np.abs(Q) ** 2 * e2
    if tag == "AffDefEll":
        return e1 - 2 * np.abs(Q) ** 2 * e2
    if tag in ("CH21", "AffIndef"):
        return np.real(-e1 - 2 * Q * R * e2)
    raise ValueError(f"unknown geometry tag {tag!r}")


def second_part(geom: GeometrySpec, values: np.ndarray, ha: float, hb: float) -> np.ndarray:
    """Discrete omega_zzbar = (omega_xx + omega_yy)/4 or omega_uv."""
    if geom.conformal:
        return 0.25 * (d2_o2(values, ha, 0) + d2_o2(values, hb, 1))
    return d1_o2(d1_o2(values, ha, 0), hb, 1)


def sample_QR(geom: GeometrySpec, Q, R, a, b):
    Qv = Q(a, b) if callable(Q) else np.full(np.broadcast(a, b).shape, complex(Q))
    if R is None:
        if not geom.conformal:
            raise ValueError("asymptotic tags need an explicit R")
        Rv = np.conj(Qv)
    else:
        Rv = R(a, b) if callable(R) else np.full(np.broadcast(a, b).shape, complex(R))
    return Qv, Rv


def tzitzeica_residual(geom: GeometrySpec, omega: ScalarField, Q, R=None) -> ScalarField:
    """Pointwise discrete left-hand side of the tag's Tzitzeica equation."""
    na, nb = omega.dims
    if na < 3 or nb < 3:
        raise GridTooSmall("residual needs at least 3 points per side")
    ha, hb = omega.spacing
    A, B = omega.grid.mesh()
    Qv, Rv = sample_QR(geom, Q, R, A, B)
    if geom.tag in ("CH21", "AffIndef"):
        check_reality(geom, PointData(0.0, 0.0, 0.0, Qv, Rv))
    lhs = second_part(geom, omega.values, ha, hb) + tzitzeica_nonlinearity(geom.tag, omega.values, Qv, Rv)
    return ScalarField(np.real(lhs), omega.grid)


# -- diagnostics -------------------------------------------------------------

# Constant gauge moving the printed matrices into the sigma-eigenspaces.  The
# CP2 matrices carry opposite signs on the (1,3) and (3,2) entries; Ad(D) with
# D = diag(1,-1,-1) in SU(3) equalises them and commutes with the CP2 reality.
TWIST_GAUGE = {"CP2": np.diag([1.0, -1.0, -1.0]).astype(complex)}


def twist_gauge(tag: str) -> np.ndarray:
    return TWIST_GAUGE.get(tag, alg.ID3)


def symmetry_defects(geom: GeometrySpec, p: PointData):
    """(twist_defect, reality_defect) for scalar PointData."""
    D = twist_gauge(geom.tag)
    Um, U0, V0, V1 = (D @ x @ D.T.conj() for x in alpha_parts(geom, p, check=False))
    twist = max(
        float(alg.norm(Um - alg.eig_project(Um, -1))),
        float(alg.norm(U0 - alg.eig_project(U0, 0))),
        float(alg.norm(V1 - alg.eig_project(V1, 1))),
        float(alg.norm(V0 - alg.eig_project(V0, 0))),
    )
    tau = geom.involution
    real = 0.0
    for lam in geom.lambda_samples:
        U, V = build_alpha(geom, p, lam, check=False)
        Us, Vs = build_alpha(geom, p, tau.mapped_lambda(lam), check=False)
        if geom.conformal:
            # conjugation swaps dz and dzbar
            d = max(float(alg.norm(tau.algebra(Vs) - U)), float(alg.norm(tau.algebra(Us) - V)))
        else:
            d = max(float(alg.norm(tau.algebra(Us) - U)), float(alg.norm(tau.algebra(Vs) - V)))
        real = max(real, d)
    return twist, real


def random_point(geom: GeometrySpec, rng) -> PointData:
    """Random admissible PointData for property tests."""
    w = rng.normal()
    if geom.conformal:
        wz = complex(rng.normal(), rng.normal())
        Q = complex(rng.normal(), rng.normal())
        return PointData(w, wz, np.conj(wz), Q, np.conj(Q))
    wu, wv = rng.normal(), rng.normal()
    if geom.tag == "CH21":
        return PointData(w, wu, wv, 1j * rng.normal(), 1j * rng.normal())
    return PointData(w, wu, wv, rng.normal(), rng.normal())
