"""3x3 complex matrices, truncated Laurent loops, the order-6 twist and the
real-form involutions of the twisted loop algebra of sl(3, C).

Matrices are plain numpy arrays of shape (..., 3, 3); every function here
broadcasts over leading axes unless stated otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroLambda

# primitive sixth root of unity, the single source for every phase below
EPS = np.exp(1j * np.pi / 3)

ID3 = np.eye(3, dtype=complex)
P_SIGMA = np.array([[0, EPS**2, 0], [EPS**4, 0, 0], [0, 0, 1]], dtype=complex)
P0 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, -1]], dtype=complex)
I21 = np.diag([1.0, 1.0, -1.0]).astype(complex)
OMEGA = np.diag([EPS**4, EPS**2, 1.0]).astype(complex)

TAGS = ("CP2", "CH2", "CH21", "AffDefEll", "AffDefHyp", "AffIndef")

INVERSE_CONJUGATE = "inverse-conjugate"  # lambda -> 1/conj(lambda)
CONJUGATE = "conjugate"  # lambda -> conj(lambda)


def as_mat3(x) -> np.ndarray:
    """Coerce to a complex (..., 3, 3) array; rejects NaN/Inf."""
    a = np.asarray(x, dtype=complex)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def unit(i: int, j: int) -> np.ndarray:
    """Matrix unit E_ij, 1-based indices."""
    e = np.zeros((3, 3), dtype=complex)
    e[i - 1, j - 1] = 1.0
    return e


def mT(x):
    return np.swapaxes(x, -1, -2)


def norm(x, axis=(-2, -1)):
    """Frobenius norm over the trailing matrix axes."""
    return np.sqrt(np.sum(np.abs(x) ** 2, axis=axis))


def bracket(x, y):
    return x @ y - y @ x


def eig_index(j: int) -> int:
    return int(j) % 6


# -- twisting automorphism ---------------------------------------------------

def twist_sigma_hat(x):
    """Lie algebra map X -> -P X^T P (P is its own inverse)."""
    return -P_SIGMA @ mT(x) @ P_SIGMA


def twist_sigma_hat_group(g):
    """Group map g -> P (g^T)^{-1} P."""
    return P_SIGMA @ np.linalg.inv(mT(g)) @ P_SIGMA


def eig_project(x, j: int):
    """Component of X in the eigenspace g_j where sigma_hat acts by EPS**j."""
    j = eig_index(j)
    x = np.asarray(x, dtype=complex)
    acc = np.zeros_like(x)
    y = x
    for m in range(6):
        acc = acc + EPS ** (-j * m) * y
        y = twist_sigma_hat(y)
    return acc / 6.0


# -- Laurent loops -----------------------------------------------------------

@dataclass(frozen=True)
class LaurentLoop:
    """Truncated Laurent series sum_k coeffs[k + N] * lambda**k, |k| <= N."""

    coeffs: np.ndarray
    N: int
    twisted: bool = False
    tail_norm: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2 * self.N + 1, 3, 3):
            raise ValueError(f"coeffs shape {c.shape} does not match N={self.N}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_dict(cls, d: dict, N: int = 8, twisted: bool = False) -> "LaurentLoop":
        c = np.zeros((2 * N + 1, 3, 3), dtype=complex)
        tail = 0.0
        for k, m in d.items():
            if abs(k) > N:
                tail = max(tail, float(norm(np.asarray(m, dtype=complex))))
                continue
            c[k + N] += as_mat3(m)
        return cls(c, N, twisted, tail)

    @classmethod
    def constant(cls, m, N: int = 8, twisted: bool = False) -> "LaurentLoop":
        return cls.from_dict({0: m}, N, twisted)

    @classmethod
    def identity(cls, N: int = 8) -> "LaurentLoop":
        return cls.constant(ID3, N, True)

    def coeff(self, k: int) -> np.ndarray:
        if abs(k) > self.N:
            return np.zeros((3, 3), dtype=complex)
        return self.coeffs[k + self.N]

    def degrees(self):
        return range(-self.N, self.N + 1)

    def support(self, tol: float = 0.0):
        return [k for k in self.degrees() if norm(self.coeff(k)) > tol]

    def retruncate(self, N: int) -> "LaurentLoop":
        c = np.zeros((2 * N + 1, 3, 3), dtype=complex)
        tail = self.tail_norm
        for k in self.degrees():
            if abs(k) <= N:
                c[k + N] = self.coeff(k)
            else:
                tail = max(tail, float(norm(self.coeff(k))))
        return LaurentLoop(c, N, self.twisted, tail)

    def __call__(self, lam):
        return loop_eval(self, lam)

    def __add__(self, other: "LaurentLoop") -> "LaurentLoop":
        n = max(self.N, other.N)
        a, b = self.retruncate(n), other.retruncate(n)
        return LaurentLoop(a.coeffs + b.coeffs, n, self.twisted and other.twisted)

    def scale(self, s) -> "LaurentLoop":
        return LaurentLoop(self.coeffs * s, self.N, self.twisted, self.tail_norm)

    def max_diff(self, other: "LaurentLoop") -> float:
        n = max(self.N, other.N)
        a, b = self.retruncate(n), other.retruncate(n)
        return float(np.max(norm(a.coeffs - b.coeffs)))


def loop_eval(L: LaurentLoop, lam):
    """Evaluate the loop at lam (scalar or array); result (..., 3, 3)."""
    lam = np.asarray(lam, dtype=complex)
    if np.any(lam == 0):
        raise ZeroLambda("loop evaluated at lambda = 0")
    ks = np.arange(-L.N, L.N + 1)
    pw = lam[..., None] ** ks  # (..., 2N+1)
    return np.einsum("...k,kij->...ij", pw, L.coeffs)


def loop_mul(A: LaurentLoop, B: LaurentLoop, N: int | None = None) -> LaurentLoop:
    """Cauchy product truncated to [-N, N]; the largest discarded coefficient
    norm is kept in tail_norm."""
    if N is None:
        N = max(A.N, B.N)
    full = np.zeros((2 * (A.N + B.N) + 1, 3, 3), dtype=complex)
    off = A.N + B.N
    for i in range(2 * A.N + 1):
        a = A.coeffs[i]
        if not np.any(a):
            continue
        ka = i - A.N
        # vectorised over the coefficients of B
        full[ka - B.N + off: ka + B.N + off + 1] += a @ B.coeffs
    out = np.zeros((2 * N + 1, 3, 3), dtype=complex)
    tail = max(A.tail_norm, B.tail_norm)
    for k in range(-(A.N + B.N), A.N + B.N + 1):
        c = full[k + off]
        if abs(k) <= N:
            out[k + N] = c
        else:
            tail = max(tail, float(norm(c)))
    return LaurentLoop(out, N, A.twisted and B.twisted, tail)


def loop_samples(L: LaurentLoop, M: int) -> np.ndarray:
    """Values at the M-th roots of unity exp(2 pi i m / M)."""
    lam = np.exp(2j * np.pi * np.arange(M) / M)
    return loop_eval(L, lam)


def loop_from_samples(values, N: int, twisted: bool = False) -> LaurentLoop:
    """Laurent coefficients from values at the M-th roots of unity (FFT).

    M must exceed 2N; the largest coefficient dropped by the truncation is
    reported as tail_norm."""
    values = np.asarray(values, dtype=complex)
    M = values.shape[0]
    if M <= 2 * N:
        raise ValueError("need more than 2N samples")
    c = np.fft.fft(values, axis=0) / M  # c[k mod M] is the coefficient of lambda**k
    ks = np.arange(-N, N + 1)
    coeffs = c[ks % M]
    kept = set((ks % M).tolist())
    tail = 0.0
    for m in range(M):
        if m not in kept:
            tail = max(tail, float(norm(c[m])))
    return LaurentLoop(coeffs, N, twisted, tail)


def circle(M: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(M) / M)


def sigma_loop(L: LaurentLoop) -> LaurentLoop:
    """sigma(L)(lambda) = sigma_hat(L(lambda / EPS)), coefficient-wise."""
    ks = np.arange(-L.N, L.N + 1)
    c = twist_sigma_hat(L.coeffs) * (EPS ** (-ks))[:, None, None]
    return LaurentLoop(c, L.N, L.twisted, L.tail_norm)


def twist_check(L: LaurentLoop) -> float:
    """Largest distance of a coefficient from its graded eigenspace."""
    worst = 0.0
    for k in L.degrees():
        c = L.coeff(k)
        worst = max(worst, float(norm(c - eig_project(c, k))))
    return worst


def twist_check_group(L: LaurentLoop, M: int = 48) -> float:
    """Group-level twisting defect max |sigma(g)(lam) - g(lam)| on the circle."""
    lam = circle(M)
    g = loop_eval(L, lam)
    sg = twist_sigma_hat_group(loop_eval(L, lam / EPS))
    return float(np.max(norm(sg - g)))


def graded_random(rng, j: int, scale: float = 1.0) -> np.ndarray:
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    return scale * eig_project(x - np.trace(x) / 3 * ID3, j)


def random_twisted_loop(rng, N: int = 8, degree: int = 4, scale: float = 1.0) -> LaurentLoop:
    d = {k: graded_random(rng, k, scale) for k in range(-degree, degree + 1)}
    return LaurentLoop.from_dict(d, N, twisted=True)


# -- real form involutions ---------------------------------------------------

@dataclass(frozen=True)
class InvolutionSpec:
    """Anti-linear involution tau(g)(lam) = f(g(lam*)) of the loop algebra.

    Algebra level f(X) = sign * B conj(X)[^T] B^{-1}; the group level replaces
    the minus-transpose by the inverse transpose.  lam* is 1/conj(lam) or
    conj(lam) depending on lambda_map.
    """

    tag: str
    conjugator: np.ndarray
    transpose_flag: bool
    lambda_map: str
    sign: int = field(default=1)

    def __post_init__(self):
        object.__setattr__(self, "conjugator", as_mat3(self.conjugator))
        if self.lambda_map not in (INVERSE_CONJUGATE, CONJUGATE):
            raise ValueError(f"unknown lambda_map {self.lambda_map!r}")

    @property
    def binv(self):
        return np.linalg.inv(self.conjugator)

    def mapped_lambda(self, lam):
        lam = np.asarray(lam, dtype=complex)
        if self.lambda_map == INVERSE_CONJUGATE:
            return 1.0 / np.conj(lam)
        return np.conj(lam)

    def algebra(self, x):
        """Pointwise part f of the algebra-level involution."""
        y = np.conj(x)
        if self.transpose_flag:
            y = mT(y)
        return self.sign * (self.conjugator @ y @ self.binv)

    def group(self, g):
        """Pointwise part of the group-level involution."""
        y = np.conj(g)
        if self.transpose_flag:
            y = np.linalg.inv(mT(y))
        return self.conjugator @ y @ self.binv

    def commutes_with_sigma(self) -> bool:
        return self.lambda_map == INVERSE_CONJUGATE


def involution_spec(tag: str) -> InvolutionSpec:
    if tag == "CP2":
        return InvolutionSpec(tag, ID3, True, INVERSE_CONJUGATE, -1)
    if tag == "CH2":
        return InvolutionSpec(tag, I21, True, INVERSE_CONJUGATE, -1)
    if tag == "CH21":
        return InvolutionSpec(tag, P0, True, CONJUGATE, -1)
    if tag == "AffDefEll":
        return InvolutionSpec(tag, P0, False, INVERSE_CONJUGATE, 1)
    if tag == "AffDefHyp":
        return InvolutionSpec(tag, I21 @ P0, False, INVERSE_CONJUGATE, 1)
    if tag == "AffIndef":
        return InvolutionSpec(tag, ID3, False, CONJUGATE, 1)
    raise ValueError(f"unknown geometry tag {tag!r}")


def apply_involution(spec: InvolutionSpec, L: LaurentLoop) -> LaurentLoop:
    """Algebra-level tau on Laurent coefficients.

    With lam -> 1/conj(lam) the degree k coefficient becomes f(c_{-k});
    with lam -> conj(lam) it stays in degree k as f(c_k)."""
    c = spec.algebra(L.coeffs)
    if spec.lambda_map == INVERSE_CONJUGATE:
        c = c[::-1]
    return LaurentLoop(c, L.N, L.twisted, L.tail_norm)


def involution_group_value(spec: InvolutionSpec, g_of_lam, lam):
    """tau(g)(lam) for a group-valued loop given as a callable of lambda."""
    return spec.group(g_of_lam(spec.mapped_lambda(lam)))


def group_reality_defect(spec: InvolutionSpec, g_of_lam, lams) -> float:
    lams = np.asarray(lams, dtype=complex)
    a = g_of_lam(lams)
    b = involution_group_value(spec, g_of_lam, lams)
    return float(np.max(norm(a - b)))
