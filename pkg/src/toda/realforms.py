"""Real form involutions of the twisted loop algebra: constraint residuals,
lattice searches and canonical representatives.

An involution is either tau = Ad(B) o beta with beta(X) = conj(X)
("conjugation" family) or tau = Ad(Q) o tau0 with tau0(X) = -conj(X)^T
("outer" family).  Its relation to the twist is either "commuting"
(sigma tau = tau sigma, lambda -> 1/conj(lambda)) or "split"
(sigma tau sigma = tau, lambda -> conj(lambda)).  On the loop level both
relations reduce to the same relation between the pointwise part and
sigma_hat, so everything here works with 3x3 matrices.

Matrices are only defined up to a scalar, so defects are computed after
normalising to det 1 and minimising over the three cube roots of unity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .algebra import (CONJUGATE, EPS, I21, ID3, INVERSE_CONJUGATE, OMEGA, P0, P_SIGMA,
                      InvolutionSpec, involution_spec, mT, twist_sigma_hat, unit)
from .errors import EmptySearch

FAMILIES = ("conjugation", "outer")
RELATIONS = ("commuting", "split")
DEFECT_TOL = 1e-10
CUBE_ROOTS = np.exp(2j * np.pi * np.arange(3) / 3)

# named representatives used for labelling canonical forms
KNOWN = {"P0": P0, "I21P0": I21 @ P0, "I": ID3}

# Phase exponents k of the entries under D = diag(d, 1/d, 1): the (i, j)
# entry picks up exp(i k theta) for d = exp(i theta).  For the conjugation
# family B -> D B conj(D)^{-1}; for the outer family Q -> D Q conj(D).
_PHASE_K = {
    "conjugation": np.array([[2, 0, 1], [0, -2, -1], [1, -1, 0]]),
    "outer": np.array([[0, 2, 1], [-2, 0, -1], [-1, 1, 0]]),
}
# modulus exponents for d = r > 0 (conjugation family only, see canonicalize)
_MOD_K = np.array([[0, 2, 1], [-2, 0, -1], [-1, 1, 0]])
# search order for the entry whose phase fixes theta
_PHASE_ORDER = ((0, 0), (0, 1), (0, 2), (1, 0), (2, 0), (1, 1), (1, 2), (2, 1))


@dataclass(frozen=True)
class ClassificationCandidate:
    family: str
    relation: str
    matrix: np.ndarray
    phase: complex = 1.0
    label: str = ""
    parameter: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (3, 3):
            raise ValueError("candidate matrix must be 3x3")
        if abs(np.linalg.det(m)) < 1e-12 * max(1.0, np.max(np.abs(m))) ** 3:
            raise ValueError("candidate matrix is singular")
        object.__setattr__(self, "matrix", m)

    def involution(self) -> InvolutionSpec:
        """Loop-level involution with the lambda map fixed by the relation."""
        outer = self.family == "outer"
        lam_map = INVERSE_CONJUGATE if self.relation == "commuting" else CONJUGATE
        return InvolutionSpec(self.label or "search", self.matrix, outer, lam_map, -1 if outer else 1)


@dataclass(frozen=True)
class SearchConfig:
    """Lattice of generalized permutation matrices.

    Entries are phase * magnitude with phases among the phase_order-th roots
    of unity; the first nonzero entry of row 1 is fixed to 1 (projective
    normalization), so each pattern contributes (phase_order*len(magnitudes))**2
    candidates."""

    phase_order: int = 12
    magnitudes: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    permutations: tuple = tuple(itertools.permutations(range(3)))
    tol: float = DEFECT_TOL


# -- batched matrix helpers --------------------------------------------------

def _det_normalize(m):
    d = np.linalg.det(m)
    return m / (d ** (1.0 / 3.0))[..., None, None]


def _min_scalar_residual(lhs, rhs):
    """min over cube roots c of |lhs - c rhs| (Frobenius), batched."""
    r = [np.linalg.norm(lhs - c * rhs, axis=(-2, -1)) for c in CUBE_ROOTS]
    return np.min(r, axis=0)


def _pointwise_map(family, m):
    """Return f(X) for the pointwise part, batched over m (n, 3, 3)."""
    minv = np.linalg.inv(m)
    if family == "conjugation":
        return lambda x: m @ np.conj(x) @ minv
    return lambda x: -(m @ mT(np.conj(x)) @ minv)


def _sl3_basis():
    out = [unit(i, j) for i in range(3) for j in range(3) if i != j]
    out.append(np.diag([1.0, -1.0, 0.0]).astype(complex))
    out.append(np.diag([0.0, 1.0, -1.0]).astype(complex))
    return out


_BASIS = _sl3_basis()


def _map_defects(family, relation, m):
    f = _pointwise_map(family, m)
    rel = np.zeros(m.shape[0])
    sq = np.zeros(m.shape[0])
    for x in _BASIS:
        fx = f(np.broadcast_to(x, m.shape))
        if relation == "commuting":
            d = twist_sigma_hat(fx) - f(np.broadcast_to(twist_sigma_hat(x), m.shape))
        else:
            d = twist_sigma_hat(f(np.broadcast_to(twist_sigma_hat(x), m.shape))) - fx
        rel = np.maximum(rel, np.linalg.norm(d, axis=(-2, -1)))
        sq = np.maximum(sq, np.linalg.norm(f(fx) - x, axis=(-2, -1)))
    return rel, sq


def _defects_batch(family, relation, mats) -> dict:
    m = _det_normalize(np.asarray(mats, dtype=complex))
    minv_t = mT(np.linalg.inv(m))
    P, Pb, W = P_SIGMA, np.conj(P_SIGMA), OMEGA
    if family == "conjugation":
        if relation == "commuting":
            # sigma^2 = Ad(Omega) commutes with tau: B = mu Omega B Omega
            sigma2 = _min_scalar_residual(m, W @ m @ W)
            sigma = _min_scalar_residual(P @ minv_t, m @ Pb)
        else:
            sigma = _min_scalar_residual(P @ minv_t @ P, m)
            sigma2 = _min_scalar_residual(W @ m @ np.conj(W), m)
        inv = _min_scalar_residual(m @ np.conj(m), np.broadcast_to(ID3, m.shape))
    else:
        if relation == "commuting":
            sigma2 = _min_scalar_residual(W @ m, m @ W)
            sigma = _min_scalar_residual(P @ minv_t, m @ P)
        else:
            sigma2 = _min_scalar_residual(W @ m @ W, m)
            sigma = _min_scalar_residual(P @ minv_t @ Pb, m)
        inv = _min_scalar_residual(m, mT(np.conj(m)))
    rel, sq = _map_defects(family, relation, m)
    return {"sigma2": sigma2, "sigma": sigma, "involution": inv,
            "map_relation": rel, "map_square": sq}


def constraint_defects(c: ClassificationCandidate) -> dict:
    """Residual of each constraint equation for the candidate, plus the
    relation and square defects of the induced map on sl3."""
    d = _defects_batch(c.family, c.relation, c.matrix[None])
    return {k: float(v[0]) for k, v in d.items()}


# -- canonicalization --------------------------------------------------------

def _scale_normalize(m):
    """|det| = 1 and first nonzero entry of row 1 positive real."""
    m = m / abs(np.linalg.det(m)) ** (1.0 / 3.0)
    row = m[0]
    j = int(np.argmax(np.abs(row) > 1e-12 * np.max(np.abs(m))))
    return m * (abs(row[j]) / row[j])


def _snap(m, digits=12):
    """Drop rounding noise so canonical forms print and compare cleanly."""
    return np.round(m.real, digits) + 0.0 + 1j * (np.round(m.imag, digits) + 0.0)


def _round_key(m, digits=9):
    r = np.round(np.concatenate([m.real.ravel(), m.imag.ravel()]), digits)
    return tuple((r + 0.0).tolist())


def _nonzero(m):
    return np.abs(m) > 1e-9 * np.max(np.abs(m))


def canonicalize(family: str, matrix) -> np.ndarray:
    """Canonical representative under the allowed moves.

    Moves: multiplication by any nonzero scalar (this contains pulling out
    cube roots), and conjugation of tau by Ad(D), D = diag(d, 1/d, 1),
    which commutes with sigma for every d.  For the conjugation family d is
    any nonzero complex number; for the outer family only |d| = 1 is used,
    so the real parameter of the diagonal family is kept.  The modulus of d
    balances the entry magnitudes (least squares in log scale); its phase
    makes the first phase-sensitive entry real relative to the (3,3) entry,
    and among the resulting finite set of branches the form with det closest
    to 1 wins, ties broken lexicographically.
    """
    m = np.array(matrix, dtype=complex)
    nz = _nonzero(m)
    if family == "conjugation":
        k = _MOD_K[nz]
        if np.any(k):
            logr = -np.sum(k * np.log(np.abs(m[nz]))) / np.sum(k * k)
            r = np.exp(logr)
            m = np.diag([r, 1 / r, 1.0]) @ m @ np.diag([1 / r, r, 1.0])
    K = _PHASE_K[family]
    pivot = next((ij for ij in _PHASE_ORDER if nz[ij] and K[ij] != 0), None)
    if pivot is None:
        return _snap(_scale_normalize(m))
    ref = next((ij for ij in [(2, 2)] + list(_PHASE_ORDER) if nz[ij] and K[ij] == 0), None)
    ref_arg = np.angle(m[ref]) if ref is not None else 0.0
    k = int(K[pivot])
    base = (ref_arg - np.angle(m[pivot])) / k
    best, best_key = None, None
    for s in range(2 * abs(k)):
        theta = base + np.pi * s / k
        m2 = _scale_normalize(m * np.exp(1j * K * theta))
        key = (round(float(abs(np.linalg.det(m2) - 1.0)), 9), _round_key(m2))
        if best_key is None or key < best_key:
            best, best_key = m2, key
    return _snap(best)


def label_for(family: str, matrix) -> tuple[str, float | None]:
    """Name of a canonical form: a known representative or the diagonal
    family diag(q, 1/q, 1) with its real parameter q."""
    m = np.asarray(matrix, dtype=complex)
    for name, ref in KNOWN.items():
        if np.allclose(m, canonicalize(family, ref), atol=1e-8):
            if name == "I" and family == "outer":
                break
            return name, None
    if np.allclose(m, np.diag(np.diag(m)), atol=1e-9):
        d = np.diag(m)
        q = d[0] / d[2]
        if abs(q.imag) < 1e-9 and abs(d[0] * d[1] / d[2] ** 2 - 1.0) < 1e-9:
            return "diag(q,1/q,1)", float(q.real)
    return "other", None


def _candidate(family, relation, matrix) -> ClassificationCandidate:
    m = canonicalize(family, matrix)
    # the scalar of the sigma relation, for the record
    mn = _det_normalize(m[None])[0]
    P = P_SIGMA
    if relation == "commuting":
        lhs = P @ mT(np.linalg.inv(mn))
        rhs = mn @ (np.conj(P) if family == "conjugation" else P)
    else:
        right = P if family == "conjugation" else np.conj(P)
        lhs, rhs = P @ mT(np.linalg.inv(mn)) @ right, mn
    phase = complex(CUBE_ROOTS[int(np.argmin([np.linalg.norm(lhs - c * rhs) for c in CUBE_ROOTS]))])
    label, q = label_for(family, m)
    return ClassificationCandidate(family, relation, m, phase, label, q)


# -- search ------------------------------------------------------------------

def lattice(config: SearchConfig) -> np.ndarray:
    """All generalized permutation matrices of the lattice, shape (n, 3, 3)."""
    ph = np.exp(2j * np.pi * np.arange(config.phase_order) / config.phase_order)
    vals = (ph[:, None] * np.asarray(config.magnitudes, dtype=float)[None, :]).ravel()
    pairs = np.array(list(itertools.product(vals, vals)))  # entries of rows 2, 3
    out = []
    for perm in config.permutations:
        m = np.zeros((pairs.shape[0], 3, 3), dtype=complex)
        m[:, 0, perm[0]] = 1.0
        m[:, 1, perm[1]] = pairs[:, 0]
        m[:, 2, perm[2]] = pairs[:, 1]
        out.append(m)
    return np.concatenate(out)


def classify_involutions(family: str, relation: str,
                         config: SearchConfig | None = None) -> list[ClassificationCandidate]:
    """Enumerate lattice candidates passing every constraint, canonicalize
    and return the distinct canonical forms in a fixed order."""
    if family not in FAMILIES or relation not in RELATIONS:
        raise ValueError(f"unknown search ({family!r}, {relation!r})")
    config = config or SearchConfig()
    mats = lattice(config)
    d = _defects_batch(family, relation, mats)
    worst = np.max(np.stack(list(d.values())), axis=0)
    hits = mats[worst < config.tol]
    if hits.shape[0] == 0:
        raise EmptySearch(f"no ({family}, {relation}) candidate below {config.tol:g} "
                          f"in a lattice of {mats.shape[0]} matrices")
    seen = {}
    for m in hits:
        c = _candidate(family, relation, m)
        seen.setdefault(_round_key(c.matrix, 8), c)
    return sorted(seen.values(), key=lambda c: (c.label, c.parameter or 0.0, _round_key(c.matrix, 8)))


# -- geometry involutions ----------------------------------------------------

def candidate_from_spec(spec: InvolutionSpec) -> ClassificationCandidate:
    family = "outer" if spec.transpose_flag else "conjugation"
    relation = "commuting" if spec.lambda_map == INVERSE_CONJUGATE else "split"
    return _candidate(family, relation, spec.conjugator)


def same_class(a: ClassificationCandidate, b: ClassificationCandidate, atol=1e-8) -> bool:
    if (a.family, a.relation) != (b.family, b.relation):
        return False
    return bool(np.allclose(canonicalize(a.family, a.matrix),
                            canonicalize(b.family, b.matrix), atol=atol))


def geometry_classes(tags=("CP2", "CH2", "CH21", "AffDefEll", "AffDefHyp", "AffIndef")) -> dict:
    return {t: candidate_from_spec(involution_spec(t)) for t in tags}


def matrix_entries(m) -> list:
    """Row-major [re, im] pairs, for reports."""
    m = np.asarray(m, dtype=complex)
    return [[float(z.real) + 0.0, float(z.imag) + 0.0] for z in m.ravel()]


__all__ = ["ClassificationCandidate", "SearchConfig", "constraint_defects",
           "classify_involutions", "canonicalize", "label_for", "lattice",
           "candidate_from_spec", "same_class", "geometry_classes", "matrix_entries",
           "FAMILIES", "RELATIONS", "EPS"]
