"""Grids, scalar fields, coefficient samplers and finite-difference stencils."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GridTooSmall


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid; index [i, j] is the point (a_i, b_j)."""

    origin: tuple = (0.0, 0.0)
    spacing: tuple = (1.0 / 32, 1.0 / 32)
    dims: tuple = (33, 33)

    def __post_init__(self):
        na, nb = self.dims
        if na < 3 or nb < 3:
            raise GridTooSmall(f"grid dims {self.dims} below 3 points per side")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def unit_square(cls, n: int, a0=0.0, b0=0.0, length=1.0) -> "Grid":
        h = length / (n - 1)
        return cls((a0, b0), (h, h), (n, n))

    @property
    def a(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.dims[0])

    @property
    def b(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.dims[1])

    def mesh(self):
        return np.meshgrid(self.a, self.b, indexing="ij")


@dataclass(frozen=True)
class ScalarField:
    """Real values on a grid, shape dims, row-major in (a, b)."""

    values: np.ndarray
    grid: Grid
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != tuple(self.grid.dims):
            raise ValueError(f"values shape {v.shape} != grid dims {self.grid.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def origin(self):
        return self.grid.origin

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def dims(self):
        return self.grid.dims


# -- samplers: callables (a, b) -> complex array ----------------------------

Sampler = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Poly:
    """Polynomial coefficient sampler.

    var = "z" evaluates sum c_k z^k at z = a + i b (holomorphic data),
    var = "a" / "b" evaluates in one real coordinate only.
    """

    def __init__(self, coeffs: Sequence[complex], var: str = "z"):
        self.coeffs = tuple(complex(c) for c in coeffs) or (0j,)
        if var not in ("z", "a", "b"):
            raise ValueError(f"unknown sampler variable {var!r}")
        self.var = var

    def _arg(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.var == "z":
            return a + 1j * b
        if self.var == "a":
            return a + 0j * b
        return b + 0j * a

    def __call__(self, a, b):
        t = self._arg(a, b)
        out = np.zeros(np.shape(t), dtype=complex)
        for c in reversed(self.coeffs):
            out = out * t + c
        return out

    def derivative(self) -> "Poly":
        return Poly([k * c for k, c in enumerate(self.coeffs)][1:] or [0], self.var)

    def __repr__(self):
        return f"Poly({list(self.coeffs)}, {self.var!r})"


def constant(c: complex, var: str = "z") -> Poly:
    return Poly([c], var)


def conj_sampler(s: Sampler) -> Sampler:
    return lambda a, b: np.conj(s(a, b))


# -- finite differences ------------------------------------------------------

def central_weights(order: int, half: int) -> np.ndarray:
    """Central stencil weights on offsets -half..half for the given derivative
    (unit spacing), from the Taylor moment conditions."""
    offs = np.arange(-half, half + 1, dtype=float)
    n = offs.size
    A = np.vander(offs, n, increasing=True).T
    rhs = np.zeros(n)
    fact = 1.0
    for k in range(1, order + 1):
        fact *= k
    rhs[order] = fact
    return np.linalg.solve(A, rhs)


def apply_stencil(f: np.ndarray, w: np.ndarray, h: float, axis: int, power: int) -> np.ndarray:
    """Apply a central stencil along axis; output covers only points whose
    stencil fits (the axis shrinks by 2*half)."""
    half = (w.size - 1) // 2
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    out = np.zeros((n - 2 * half,) + f.shape[1:], dtype=np.result_type(f, float))
    for k, wk in enumerate(w):
        if wk != 0.0:
            out = out + wk * f[k: n - 2 * half + k]
    return np.moveaxis(out / h**power, 0, axis)


def d1_o2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative, second order everywhere (one-sided at the ends)."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    d = np.empty_like(f, dtype=np.result_type(f, float))
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return np.moveaxis(d, 0, axis)


def d2_o2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative, second order everywhere (one-sided at the ends)."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    if f.shape[0] < 3:
        raise GridTooSmall("second derivative needs 3 points")
    d = np.empty_like(f, dtype=np.result_type(f, float))
    d[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
    if f.shape[0] == 3:
        # only one interior point; the ends reuse it (first order)
        d[0] = d[-1] = d[1]
        return np.moveaxis(d, 0, axis)
    d[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
    d[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    return np.moveaxis(d, 0, axis)
