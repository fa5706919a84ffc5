"""Birkhoff and Iwasawa splittings of loops and the two DPW pipelines.

Loops are handled in two interchangeable forms: LaurentLoop coefficients and
values on the M-th roots of unity.  The Birkhoff step solves the finite
block-Toeplitz section of the Riemann-Hilbert problem L L_- = L_+; the
Iwasawa step reduces to a Birkhoff split of X = C^-1 tau(C) on the circle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from .errors import NoConvergence, RealityViolation, SingularCell
from .fields import Grid, ScalarField
from .frames import FrameField, SurfaceMesh, ValidationReport, extract_surface, validate_surface
from .geometry import GeometrySpec

COND_MAX = 1e8
SPLIT_TOL = 1e-9


@dataclass
class LoopFactorPair:
    """plus: L_+ (Birkhoff) or V_+ (Iwasawa); other: L_- or the real-form F."""

    plus: alg.LaurentLoop
    other: alg.LaurentLoop
    residual: float
    cell: str = "big"
    info: dict = field(default_factory=dict)


# -- sample helpers ------------------------------------------------------------

def _coeffs_from_samples(values, K):
    """(..., M, 3, 3) circle samples -> (..., 2K+1, 3, 3) coefficients of
    degrees -K..K and the largest dropped coefficient."""
    M = values.shape[-3]
    c = np.fft.fft(values, axis=-3) / M  # c[k mod M] is the coefficient of lambda**k
    ks = np.arange(-K, K + 1)
    kept = np.take(c, ks % M, axis=-3)
    mask = np.ones(M, bool)
    mask[ks % M] = False
    tail = float(np.max(alg.norm(c[..., mask, :, :]))) if mask.any() else 0.0
    return kept, tail


def _eval_coeffs(coeffs, lams):
    """Evaluate (..., 2K+1, 3, 3) coefficients (degrees -K..K) at lams (L,)."""
    K = (coeffs.shape[-3] - 1) // 2
    pw = np.asarray(lams, dtype=complex)[:, None] ** np.arange(-K, K + 1)
    return np.einsum("lk,...kij->...lij", pw, coeffs)


def sample_twist_defect(values) -> float:
    """max |sigma_hat(C(lam/eps)) - C(lam)| for circle samples, M divisible by 6."""
    M = values.shape[-3]
    if M % 6:
        raise ValueError("twist check needs M divisible by 6")
    shifted = np.roll(values, M // 6, axis=-3)  # index m -> value at lam_m / eps
    return float(np.max(alg.norm(alg.twist_sigma_hat_group(shifted) - values)))


# -- Birkhoff --------------------------------------------------------------------

def _birkhoff_core(coeffs, K, cond_max=COND_MAX):
    """Batched finite-section solve.  coeffs: (..., 2N+1, 3, 3) of degrees
    -N..N.  Returns (plus coeffs degrees 0..N+K, minus coeffs degrees -K..0
    as (..., K+1, 3, 3) with index k meaning lambda**-k, condition numbers)."""
    N = (coeffs.shape[-3] - 1) // 2
    batch = coeffs.shape[:-3]

    def Lk(d):
        if abs(d) > N:
            return np.zeros(batch + (3, 3), dtype=complex)
        return coeffs[..., d + N, :, :]

    T = np.zeros(batch + (3 * K, 3 * K), dtype=complex)
    rhs = np.zeros(batch + (3 * K, 3), dtype=complex)
    for j in range(1, K + 1):
        rhs[..., 3 * (j - 1): 3 * j, :] = -Lk(-j)
        for k in range(1, K + 1):
            T[..., 3 * (j - 1): 3 * j, 3 * (k - 1): 3 * k] = Lk(k - j)
    cond = np.linalg.cond(T)
    bad = ~np.isfinite(cond) | (cond > cond_max)
    m = np.zeros(batch + (K + 1, 3, 3), dtype=complex)
    m[..., 0, :, :] = alg.ID3
    good = ~bad
    if np.any(good):
        sol = np.linalg.solve(T[good], rhs[good])
        m[good, 1:] = sol.reshape(sol.shape[:-2] + (K, 3, 3))
    # L_+ = nonnegative part of L L_-
    plus = np.zeros(batch + (N + 1, 3, 3), dtype=complex)
    for d in range(N + 1):
        acc = np.zeros(batch + (3, 3), dtype=complex)
        for k in range(K + 1):
            if d + k <= N:
                acc = acc + Lk(d + k) @ m[..., k, :, :]
        plus[..., d, :, :] = acc
    return plus, m, cond


def _plus_values(plus, lams):
    pw = np.asarray(lams, dtype=complex)[:, None] ** np.arange(plus.shape[-3])
    return np.einsum("lk,...kij->...lij", pw, plus)


def _minus_values(m, lams):
    pw = np.asarray(lams, dtype=complex)[:, None] ** (-np.arange(m.shape[-3]))
    return np.einsum("lk,...kij->...lij", pw, m)


def _plus_loop(plus, N):
    d = {k: plus[k] for k in range(plus.shape[0])}
    return alg.LaurentLoop.from_dict(d, N)


def _minus_loop(m, N):
    d = {-k: m[k] for k in range(m.shape[0])}
    return alg.LaurentLoop.from_dict(d, N)


def birkhoff_split(L: alg.LaurentLoop, K: int | None = None, tol: float = SPLIT_TOL, cond_max: float = COND_MAX) -> LoopFactorPair:
    """L = L_+ L_-^-1 with L_-(inf) = I.

    The unknown coefficients of L_- (degrees -1..-K) solve the block-Toeplitz
    system sum_k L_{k-j} m_k = -L_{-j}, j = 1..K.  K defaults to N with one
    retry at 2N when the reassembly residual on the circle exceeds tol.
    """
    N = L.N
    tries = [K] if K is not None else [max(N, 1), 2 * max(N, 1)]
    last = None
    for K in tries:
        plus, m, cond = _birkhoff_core(L.coeffs, K, cond_max)
        if not np.isfinite(cond) or cond > cond_max:
            raise SingularCell(f"Toeplitz condition number {cond:.3e} above {cond_max:.0e}", float(cond))
        M = 1 << int(np.ceil(np.log2(4 * (N + K) + 8)))
        lam = alg.circle(M)
        Lv = alg.loop_eval(L, lam)
        back = _plus_values(plus, lam) @ np.linalg.inv(_minus_values(m, lam))
        res = float(np.max(alg.norm(Lv - back)))
        n_out = max(N, K)
        pair = LoopFactorPair(_plus_loop(plus, n_out), _minus_loop(m, n_out), res, "big", {"K": K, "condition": float(cond)})
        if res <= tol:
            return pair
        last = pair
    raise NoConvergence(f"Birkhoff residual {last.residual:.3e} above {tol:.0e}", [last.residual])


# -- Iwasawa ---------------------------------------------------------------------

def _tau_samples(spec: alg.InvolutionSpec, values):
    if spec.lambda_map != alg.INVERSE_CONJUGATE:
        raise ValueError(f"{spec.tag}: Iwasawa splitting needs an involution with lambda -> 1/conj(lambda)")
    # on the unit circle 1/conj(lambda) = lambda
    return spec.group(values)


def _normaliser(spec: alg.InvolutionSpec, L0, diag_tol=1e-8):
    """V_+(0) from L_+(0) = V_+(0)^-1 tau_hat(V_+(0)).

    Twisted loops give L_+(0) = diag(l, 1/l, 1) and V_+(0) = diag(l^-1/2, l^1/2, 1)
    (needs l > 0).  For the compact spec a general L_+(0) is Hermitian
    positive definite and V_+(0) is its upper-triangular Cholesky factor."""
    off = np.abs(L0 - np.diag(np.diag(L0))).max()
    scale = max(1.0, float(np.abs(L0).max()))
    if off <= diag_tol * scale:
        l = L0[0, 0]
        if abs(l.imag) > diag_tol * abs(l) or l.real <= 0:
            raise SingularCell(f"constant term {l:.3g} outside the big Iwasawa cell")
        l = l.real
        return np.diag([l**-0.5, l**0.5, 1.0]).astype(complex)
    if spec.tag == "CP2":
        H = np.linalg.inv(L0)
        H = 0.5 * (H + H.conj().T)
        try:
            c = np.linalg.cholesky(H)  # H = c c^*, c lower
        except np.linalg.LinAlgError as e:
            raise SingularCell("constant term not positive definite") from e
        V0 = c.conj().T  # upper triangular, V0^* V0 = H
        return V0 / np.linalg.det(V0) ** (1 / 3)
    raise SingularCell("constant term is not diagonal; input loop not twisted")


def _iwasawa_samples(Cv, spec, K, tol, cond_max=COND_MAX):
    """Core split on circle samples Cv (M, 3, 3).  Returns F samples, V_+
    samples, plus coeffs of L_+, the G0 normaliser and diagnostics."""
    M = Cv.shape[0]
    X = np.linalg.solve(Cv, _tau_samples(spec, Cv))
    Xc, xtail = _coeffs_from_samples(X, K)
    plus, m, cond = _birkhoff_core(Xc, K, cond_max)
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularCell(f"Toeplitz condition number {cond:.3e} above {cond_max:.0e}", float(cond))
    lam = alg.circle(M)
    Lp = _plus_values(plus, lam)
    Lm = _minus_values(m, lam)
    bres = float(np.max(alg.norm(X - Lp @ np.linalg.inv(Lm))))
    V0 = _normaliser(spec, plus[0])
    tV0 = spec.group(V0)
    Vp = tV0 @ np.linalg.inv(Lp)
    F = Cv @ Lp @ np.linalg.inv(tV0)
    real = float(np.max(alg.norm(spec.group(F) - F)))
    return F, Vp, V0, {"birkhoff_residual": bres, "reality": real, "x_tail": xtail, "condition": float(cond),
                       "plus": plus}


def iwasawa_split(L: alg.LaurentLoop, spec: alg.InvolutionSpec, M: int = 96, tol: float = SPLIT_TOL) -> LoopFactorPair:
    """L = F V_+ with F fixed by the group involution and V_+ having only
    nonnegative degrees, V_+(0) upper triangular with positive diagonal.

    F is computed as L L_+ tau_hat(V_+(0))^-1 where X = L^-1 tau(L) = L_+ L_-^-1.
    Every return is gated by reassembly of the truncated factors on the
    circle; one retry doubles the sample count.
    """
    last = None
    for Ms in (M, 2 * M):
        K = Ms // 4
        lam = alg.circle(Ms)
        Cv = alg.loop_eval(L, lam)
        F, Vp, V0, info = _iwasawa_samples(Cv, spec, K, tol)
        n_out = max(L.N, K)
        Floop = alg.loop_from_samples(F, n_out)
        Vloop = alg.loop_from_samples(Vp, n_out)
        neg = max((float(alg.norm(Vloop.coeff(k))) for k in range(-n_out, 0)), default=0.0)
        back = alg.loop_eval(Floop, lam) @ alg.loop_eval(Vloop, lam)
        res = max(float(np.max(alg.norm(Cv - back))), info["reality"], neg, info["birkhoff_residual"])
        info.pop("plus")
        info.update(negative_part=neg, M=Ms, V0=V0)
        last = LoopFactorPair(Vloop, Floop, res, "big", info)
        if res <= tol:
            return last
    raise NoConvergence(f"Iwasawa residual {last.residual:.3e} above {tol:.0e}", [last.residual])


# -- potentials ------------------------------------------------------------------

def _as_sampler(c):
    if callable(c):
        return c
    m = alg.as_mat3(c)
    return lambda t: np.broadcast_to(m, np.shape(t) + (3, 3))


@dataclass
class Potential:
    """lambda-graded potential.

    conformal: eta = sum_j lam^j eta_j(z) dz, j >= -1.
    asymptotic: eta1 = sum_j lam^j eta_j(u) du (j >= -1) and
    eta2 = sum_j lam^j eta2_j(v) dv (j <= 1).
    Coefficients are constant matrices or callables t -> (..., 3, 3).
    """

    eta: dict
    kind: str = "conformal"
    eta2: dict | None = None
    spec: alg.InvolutionSpec | None = None
    probe: tuple = (0.0, 0.25, 0.5)
    tol: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("conformal", "asymptotic"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        self.eta = {int(k): _as_sampler(v) for k, v in self.eta.items()}
        if min(self.eta) != -1:
            raise ValueError("lowest degree of eta must be -1")
        if self.kind == "asymptotic":
            if self.eta2 is None:
                raise ValueError("asymptotic potentials need eta2")
            self.eta2 = {int(k): _as_sampler(v) for k, v in self.eta2.items()}
            if max(self.eta2) != 1:
                raise ValueError("highest degree of eta2 must be +1")
        self.check()

    def components(self):
        yield self.eta
        if self.eta2 is not None:
            yield self.eta2

    def check(self):
        t = np.asarray(self.probe, dtype=float)
        for comp in self.components():
            for j, s in comp.items():
                vals = np.asarray(s(t + 0j), dtype=complex)
                d = float(np.max(alg.norm(vals - alg.eig_project(vals, j))))
                if d > self.tol:
                    raise ValueError(f"eta_{j} leaves its eigenspace (defect {d:.2e})")
                if self.kind == "asymptotic" and self.spec is not None:
                    r = float(np.max(alg.norm(self.spec.algebra(vals) - vals)))
                    if r > self.tol:
                        raise RealityViolation(f"eta_{j} is not fixed by the involution (defect {r:.2e})")

    @staticmethod
    def matrix(comp: dict, t, lams):
        """sum_j lam^j eta_j(t): shape t.shape + (L, 3, 3)."""
        t = np.asarray(t)
        lams = np.asarray(lams, dtype=complex)
        out = 0
        for j, s in comp.items():
            out = out + np.asarray(s(t), dtype=complex)[..., None, :, :] * (lams**j)[:, None, None]
        return out


def integrate_potential(eta: dict, path, base=None, lams=None, M: int = 96, substeps: int = 4) -> np.ndarray:
    """RK4 solution of dC = C eta along the piecewise-linear path, with
    `substeps` steps per path segment.

    eta: a Potential component (degree -> coefficient sampler).  Returns C at
    every path point and every lambda in lams (default: M roots of unity),
    shape (len(path), L, 3, 3), with C(path[0]) = base.
    """
    path = np.asarray(path, dtype=complex)
    lams = alg.circle(M) if lams is None else np.asarray(lams, dtype=complex)
    base = alg.ID3 if base is None else alg.as_mat3(base)
    C = np.broadcast_to(base, lams.shape + (3, 3)).copy()
    out = np.empty((len(path),) + C.shape, dtype=complex)
    out[0] = C
    for n in range(1, len(path)):
        dz = (path[n] - path[n - 1]) / substeps
        for k in range(substeps):
            z0 = path[n - 1] + k * dz
            A0 = Potential.matrix(eta, z0, lams) * dz
            Am = Potential.matrix(eta, z0 + 0.5 * dz, lams) * dz
            A1 = Potential.matrix(eta, z0 + dz, lams) * dz
            k1 = C @ A0
            k2 = (C + 0.5 * k1) @ Am
            k3 = (C + 0.5 * k2) @ Am
            k4 = (C + k3) @ A1
            C = C + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[n] = C
    return out


def _grid_solution(eta: dict, grid: Grid, lams) -> np.ndarray:
    """C(z) on every grid point (z = a + i b) from C(z0) = I: first along the
    bottom row, then up each column; holomorphy makes this path choice
    irrelevant."""
    a, b = grid.a, grid.b
    row = integrate_potential(eta, a + 1j * b[0], None, lams)
    out = np.empty((len(a), len(b)) + row.shape[1:], dtype=complex)
    for i in range(len(a)):
        # C(a_i + i b) = C(a_i + i b_0) Phi(b), Phi(b_0) = I
        out[i] = row[i][None] @ integrate_potential(eta, a[i] + 1j * b, None, lams)
    return out


# -- DPW -------------------------------------------------------------------------

@dataclass
class DPWResult:
    frames: dict  # lambda -> FrameField
    mesh: SurfaceMesh
    report: ValidationReport
    omega: ScalarField
    mask: np.ndarray
    info: dict = field(default_factory=dict)


def _omega_field(m2, grid, mask):
    w = np.where(mask, np.log(np.where(mask, m2, 1.0)), 0.0)
    return ScalarField(w, grid, {"source": "loop splitting"})


def dpw_conformal(eta: Potential, geom: GeometrySpec, grid: Grid, Q=None, lams=(1.0,), M: int = 96,
                  tol: float = SPLIT_TOL) -> DPWResult:
    """Conformal loop-group construction: C solves dC = C eta with C(z0) = I;
    C = F V_+ pointwise; F is the extended frame, e^{omega/2} = V_+(0)_{11}.

    Q is the cubic-differential sampler used for validation (the recovered
    frame carries Q = -(eta_{-1})_{21} for the Lagrangian tags and
    (eta_{-1})_{21} for the affine ones)."""
    if eta.kind != "conformal":
        raise ValueError("dpw_conformal needs a conformal potential")
    spec = geom.involution
    lams = tuple(complex(l) for l in lams)
    circ = alg.circle(M)
    all_l = np.concatenate([circ, np.asarray(lams)])
    C = _grid_solution(eta.eta, grid, all_l)
    na, nb = grid.dims
    mask = np.ones((na, nb), bool)
    frames = {l: np.full((na, nb, 3, 3), np.nan, dtype=complex) for l in lams}
    m2 = np.ones((na, nb))
    worst = {"reality": 0.0, "birkhoff_residual": 0.0, "twist": 0.0}
    K = M // 4
    for i in range(na):
        for j in range(nb):
            Cv = C[i, j, :M]
            try:
                F, Vp, V0, info = _iwasawa_samples(Cv, spec, K, tol)
            except SingularCell:
                mask[i, j] = False
                continue
            if max(info["reality"], info["birkhoff_residual"]) > tol:
                mask[i, j] = False
                continue
            worst["reality"] = max(worst["reality"], info["reality"])
            worst["birkhoff_residual"] = max(worst["birkhoff_residual"], info["birkhoff_residual"])
            worst["twist"] = max(worst["twist"], sample_twist_defect(F))
            m2[i, j] = abs(V0[0, 0]) ** 2
            # F(lam) = C(lam) L_+(lam) tau_hat(V0)^-1 at the requested lambdas
            Lp = _plus_values(info["plus"], np.asarray(lams))
            tinv = np.linalg.inv(spec.group(V0))
            for n, l in enumerate(lams):
                frames[l][i, j] = C[i, j, M + n] @ Lp[n] @ tinv
    omega = _omega_field(m2, grid, mask)
    ff = {l: FrameField(frames[l], grid, l, geom.tag, (0, 0), alg.ID3.copy(), {"mask": mask}) for l in lams}
    first = ff[lams[0]]
    filled = FrameField(np.where(mask[..., None, None], first.frames, alg.ID3), grid, lams[0], geom.tag)
    mesh = extract_surface(geom, filled)
    mesh.mask = mask
    report = validate_surface(geom, mesh, omega, Q)
    return DPWResult(ff, mesh, report, omega, mask, worst)


def dpw_asymptotic(pair: Potential, geom: GeometrySpec, grid: Grid, Q=None, R=None, lams=(1.0,), M: int = 96,
                   tol: float = SPLIT_TOL) -> DPWResult:
    """Asymptotic-line construction: C1(u), C2(v) from the two potentials,
    C1^-1 C2 = L_+ L_-^-1 pointwise, W = C1 L_+ = C2 L_-, then the G0 gauge
    diag(t^-1/2, t^1/2, 1) with t from L_+(0) = diag(t, 1/t, 1) puts W into the
    coordinate-frame normalisation; e^omega = 1/t."""
    if pair.kind != "asymptotic":
        raise ValueError("dpw_asymptotic needs a potential pair")
    lams = tuple(complex(l) for l in lams)
    circ = alg.circle(M)
    all_l = np.concatenate([circ, np.asarray(lams)])
    C1 = integrate_potential(pair.eta, grid.a + 0j, None, all_l)
    C2 = integrate_potential(pair.eta2, grid.b + 0j, None, all_l)
    na, nb = grid.dims
    K = M // 4
    X = np.linalg.solve(C1[:, None, :M], C2[None, :, :M])  # (na, nb, M, 3, 3)
    Xc, xtail = _coeffs_from_samples(X, K)
    plus, m, cond = _birkhoff_core(Xc, K)
    mask = np.isfinite(cond) & (cond <= COND_MAX)
    Lp = _plus_values(plus, circ)
    Lm = _minus_values(m, circ)
    match = alg.norm(C1[:, None, :M] @ Lp - C2[None, :, :M] @ Lm)
    match_max = np.max(match, axis=-1)
    t = plus[..., 0, 0, 0]
    ok_t = (np.abs(t.imag) <= 1e-8 * np.abs(t)) & (t.real > 0)
    mask &= ok_t & (match_max <= tol)
    ts = np.where(mask, t.real, 1.0)
    D = np.zeros((na, nb, 3, 3))
    D[..., 0, 0], D[..., 1, 1], D[..., 2, 2] = ts**-0.5, ts**0.5, 1.0
    frames = {}
    lam_arr = np.asarray(lams)
    Lp_l = _plus_values(plus, lam_arr)
    Lm_l = _minus_values(m, lam_arr)
    for n, l in enumerate(lams):
        if abs(l) <= 1:
            W = C1[:, None, M + n] @ Lp_l[..., n, :, :]
        else:
            W = C2[None, :, M + n] @ Lm_l[..., n, :, :]
        Fv = np.where(mask[..., None, None], W @ D, np.nan)
        frames[l] = FrameField(Fv, grid, l, geom.tag, (0, 0), alg.ID3.copy(), {"mask": mask})
    omega = _omega_field(1.0 / ts, grid, mask)
    first = frames[lams[0]]
    filled = FrameField(np.where(mask[..., None, None], first.frames, alg.ID3), grid, lams[0], geom.tag)
    mesh = extract_surface(geom, filled)
    mesh.mask = mask
    report = validate_surface(geom, mesh, omega, Q, R)
    info = {"matching_defect": float(np.max(np.where(mask, match_max, 0.0))), "x_tail": xtail}
    return DPWResult(frames, mesh, report, omega, mask, info)
