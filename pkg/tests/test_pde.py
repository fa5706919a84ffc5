import numpy as np
import pytest

from toda.errors import Blowup, NoConvergence, RealityViolation
from toda.fields import Grid, Poly, ScalarField, constant
from toda.geometry import geometry, tzitzeica_nonlinearity, tzitzeica_residual
from toda.pde import GoursatData, cell_residual, solve_elliptic, solve_hyperbolic


def test_cp2_trivial_root():
    w = solve_elliptic(geometry("CP2"), constant(1.0), None, Grid.unit_square(17))
    assert w.info["iterations"] <= 3
    assert np.all(w.values == 0.0)


def test_ch2_zero_data_is_nontrivial():
    # the CH2 equation has no constant root, so zero Dirichlet data gives a
    # genuinely nonzero solution; it still passes the independent residual check.
    # The equation is of Bratu type, so the domain is kept small enough to
    # have a solution at all
    g = geometry("CH2")
    w = solve_elliptic(g, constant(1.0), None, Grid.unit_square(17, length=0.5))
    assert np.max(np.abs(w.values)) > 1e-2
    assert np.all(w.values[1:-1, 1:-1] < 0)
    r = tzitzeica_residual(g, w, constant(1.0)).values[1:-1, 1:-1]
    assert np.max(np.abs(r)) < 1e-9


@pytest.mark.parametrize("tag", ["CP2", "CH2", "AffDefEll", "AffDefHyp"])
def test_elliptic_residual_certificate(tag):
    g = geometry(tag)
    G = Grid.unit_square(21)
    Q = Poly([0.4, 0.2 - 0.1j])
    w = solve_elliptic(g, Q, lambda x, y: 0.2 * x * (1 - y) - 0.1 * y, G)
    assert w.info["residual"] < 1e-10
    r = tzitzeica_residual(g, w, Q).values[1:-1, 1:-1]
    assert np.max(np.abs(r)) < 1e-9
    # Dirichlet data kept exactly
    X, Y = G.mesh()
    edge = 0.2 * X * (1 - Y) - 0.1 * Y
    assert np.array_equal(w.values[0], edge[0]) and np.array_equal(w.values[:, -1], edge[:, -1])


def test_elliptic_manufactured_order():
    g, Q, errs = geometry("CP2"), constant(0.8), []
    for n in (17, 33, 65):
        G = Grid.unit_square(n)
        X, Y = G.mesh()
        ws = 0.1 * np.sin(np.pi * X) * np.sin(np.pi * Y)
        forcing = -0.5 * np.pi**2 * ws + tzitzeica_nonlinearity("CP2", ws, 0.8)
        errs.append(np.max(np.abs(solve_elliptic(g, Q, None, G, forcing=forcing).values - ws)))
    ratios = np.array(errs[:-1]) / errs[1:]
    assert np.all(np.log2(ratios) >= 1.9)


def test_newton_quadratic():
    G = Grid.unit_square(17)
    w = solve_elliptic(geometry("CP2"), constant(1.0), lambda x, y: 0.3 * x * y, G, tol=1e-13)
    h = w.info["history"]
    assert len(h) >= 3
    # once in the basin, each residual is bounded by a multiple of the square of the last
    for r0, r1 in zip(h[1:-1], h[2:]):
        assert r1 <= 10 * r0**2 or r1 < 1e-12


def test_elliptic_no_convergence():
    with pytest.raises(NoConvergence) as e:
        solve_elliptic(geometry("CP2"), constant(1.0), lambda x, y: 3.0 * x, Grid.unit_square(17), max_iter=1)
    assert len(e.value.history) >= 1


def test_elliptic_rejects_asymptotic_tag():
    with pytest.raises(ValueError):
        solve_elliptic(geometry("AffIndef"), constant(1.0), None, Grid.unit_square(9))


def test_hyperbolic_trivial():
    G = Grid.unit_square(33)
    w = solve_hyperbolic(geometry("AffIndef"), constant(1.0, "a"), constant(1.0, "b"), GoursatData.zeros(33, 33), G)
    assert np.all(w.values == 0.0)
    w = solve_hyperbolic(geometry("CH21"), constant(1j, "a"), constant(-1j, "b"), GoursatData.zeros(33, 33), G)
    assert np.all(w.values == 0.0)


def test_ch21_equal_imaginary_q_r_has_no_constant_root():
    # Q = R = i makes QR = -1 and both terms of N negative
    c = np.linspace(-20, 20, 4001)
    assert np.all(tzitzeica_nonlinearity("CH21", c, 1j, 1j) < 0)


def test_hyperbolic_manufactured_bilinear():
    # the trapezoid cell rule integrates a constant omega_uv exactly, so the
    # bilinear solution is recovered to rounding rather than at order 2
    g, errs = geometry("AffIndef"), []
    for n in (17, 33, 65):
        G = Grid.unit_square(n)
        U, V = G.mesh()
        ws = 0.1 * U * V
        forcing = 0.1 + tzitzeica_nonlinearity("AffIndef", ws, 1.0, 1.0)
        w = solve_hyperbolic(g, constant(1.0, "a"), constant(1.0, "b"),
                             GoursatData.from_function(lambda u, v: 0.1 * u * v, G), G, forcing=forcing)
        errs.append(np.max(np.abs(w.values - ws)))
    assert max(errs) < 1e-13


def test_hyperbolic_manufactured_order():
    def exact(u, v):
        return 0.2 * np.sin(2 * u) * np.sin(3 * v) + 0.1 * u

    g, errs = geometry("AffIndef"), []
    for n in (17, 33, 65):
        G = Grid.unit_square(n)
        U, V = G.mesh()
        ws = exact(U, V)
        forcing = 1.2 * np.cos(2 * U) * np.cos(3 * V) + tzitzeica_nonlinearity("AffIndef", ws, 1.0, 1.0)
        w = solve_hyperbolic(g, constant(1.0, "a"), constant(1.0, "b"), GoursatData.from_function(exact, G), G,
                             forcing=forcing)
        errs.append(np.max(np.abs(w.values - ws)))
    assert np.all(np.log2(np.array(errs[:-1]) / errs[1:]) >= 1.9)


def test_hyperbolic_cell_certificate():
    g = geometry("CH21")
    Q, R = Poly([1j, 0.5j], "a"), Poly([-0.7j, 0.2j], "b")
    G = Grid.unit_square(33)
    data = GoursatData(0.15 * np.sin(2 * G.a), 0.1 * np.sin(3 * G.b))
    loose = solve_hyperbolic(g, Q, R, data, G)
    tight = solve_hyperbolic(g, Q, R, data, G, corrector_tol=1e-14)
    assert cell_residual(g, tight, Q, R) < 1e-10
    assert cell_residual(g, loose, Q, R) > cell_residual(g, tight, Q, R)
    # the pointwise residual is a discretisation estimate, small but O(h^2)
    r = tzitzeica_residual(g, tight, Q, R).values[1:-1, 1:-1]
    assert np.max(np.abs(r)) < 1e-2


def test_blowup_guard():
    with pytest.raises(Blowup) as e:
        solve_hyperbolic(geometry("AffIndef"), constant(1.0, "a"), constant(-1.0, "b"), GoursatData.zeros(33, 33),
                         Grid.unit_square(33, length=6.0))
    i, j = e.value.index
    assert 0 < i < 33 and 0 < j < 33


def test_hyperbolic_input_checks():
    G = Grid.unit_square(9)
    g = geometry("AffIndef")
    with pytest.raises(ValueError):
        GoursatData((1.0, 0.0), (0.0, 0.0))
    with pytest.raises(RealityViolation):
        solve_hyperbolic(g, constant(1j, "a"), constant(1.0, "b"), GoursatData.zeros(9, 9), G)
    with pytest.raises(ValueError):
        # Q must be a function of u alone
        solve_hyperbolic(g, Poly([1.0, 1.0], "b"), constant(1.0, "b"), GoursatData.zeros(9, 9), G)
    with pytest.raises(ValueError):
        solve_hyperbolic(geometry("CP2"), constant(1.0), constant(1.0), GoursatData.zeros(9, 9), G)
    with pytest.raises(ValueError):
        solve_hyperbolic(g, constant(1.0, "a"), constant(1.0, "b"), GoursatData.zeros(8, 9), G)


def test_scalar_field_rejects_nonfinite():
    G = Grid.unit_square(5)
    with pytest.raises(ValueError):
        ScalarField(np.full(G.dims, np.inf), G)
