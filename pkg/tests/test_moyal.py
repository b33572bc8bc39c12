import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import moyal_quadrature
from weyllab.moyal import (MAX_ORDER, moyal_commutator, moyal_exact, moyal_expansion, moyal_term,
                           moyal_truncated)
from weyllab.phasespace import constant_symbol, gaussian_symbol, make_grid, matrix_symbol, polynomial_symbol
from weyllab.sapt import x_function

X = polynomial_symbol({(1, 0): 1.0}, "x")
XI = polynomial_symbol({(0, 1): 1.0}, "xi")
PTS = tuple(np.meshgrid(np.linspace(-1.5, 1.5, 5), np.linspace(-1, 2, 4), indexing="ij"))


def pair():
    return gaussian_symbol(0.3, 0.2, 1.0, 0.8), gaussian_symbol(-0.2, -0.1, 0.8, 0.7)


def bump():
    return x_function(lambda n, y: _gauss_n(n, y), name="bump")


def _gauss_n(n, y):
    # d^n/dy^n exp(-y^2) by the Hermite recursion
    h0, h1 = np.ones_like(y), -2 * y
    if n == 0:
        return np.exp(-y ** 2)
    for k in range(1, n):
        h0, h1 = h1, -2 * y * h1 - 2 * k * h0
    return h1 * np.exp(-y ** 2)


def test_zeroth_term_pointwise():
    f, g = pair()
    v = moyal_term(f, g, 0, at=PTS)[..., 0, 0]
    np.testing.assert_allclose(v, f(*PTS) * g(*PTS), atol=1e-15)


def test_first_term_xi_x():
    v = moyal_term(XI, X, 1, at=PTS)[..., 0, 0]
    np.testing.assert_allclose(v, -0.5j, atol=1e-15)


def test_first_term_is_half_bracket():
    from weyllab.phasespace import poisson_bracket
    f, g = pair()
    v = moyal_term(f, g, 1, at=PTS)
    np.testing.assert_allclose(v, -0.5j * poisson_bracket(f, g, at=PTS), atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_position_only_terms_vanish(n):
    V = bump()
    W = x_function(lambda k, y: np.cos(y) if k % 4 == 0 else (-np.sin(y) if k % 4 == 1 else
                                                              (-np.cos(y) if k % 4 == 2 else np.sin(y))))
    assert np.max(np.abs(moyal_term(V, W, n, at=PTS))) < 1e-10


def test_second_term_by_hand():
    # xi^2 # x^2 = x^2 xi^2 - 2i eps x xi - eps^2 / 2, from [P^2, X^2] = -2i eps (PX + XP)
    xi2 = polynomial_symbol({(0, 2): 1.0})
    x2 = polynomial_symbol({(2, 0): 1.0})
    x, xi = PTS
    np.testing.assert_allclose(moyal_term(xi2, x2, 1, at=PTS)[..., 0, 0], -2j * x * xi, atol=1e-14)
    np.testing.assert_allclose(moyal_term(xi2, x2, 2, at=PTS)[..., 0, 0], -0.5, atol=1e-14)
    np.testing.assert_allclose(moyal_term(xi2, x2, 3, at=PTS)[..., 0, 0], 0.0, atol=1e-14)


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.01])
def test_truncated_xi_x_exact(eps):
    v = moyal_truncated(XI, X, 1, eps, at=PTS)[..., 0, 0]
    x, xi = PTS
    assert np.max(np.abs(v - (x * xi - 0.5j * eps))) < 1e-12
    # higher orders add nothing for linear symbols
    v3 = moyal_truncated(XI, X, 3, eps, at=PTS)[..., 0, 0]
    assert np.max(np.abs(v3 - v)) < 1e-14


def test_truncated_order_zero_pointwise():
    f, g = pair()
    s = moyal_truncated(f, g, 0, 0.1)
    np.testing.assert_allclose(s(*PTS), f(*PTS) * g(*PTS))


def test_truncated_symbol_matches_sampled():
    f, g = pair()
    eps = 0.2
    s = moyal_truncated(f, g, 2, eps)
    a = moyal_truncated(f, g, 2, eps, at=PTS)[..., 0, 0]
    # the closure form uses FD derivatives of the terms only through evaluation, same values
    np.testing.assert_allclose(s(*PTS), a, atol=1e-12)


def test_expansion_total_and_lattice():
    f, g = pair()
    lat = make_grid(64, 13.0).lattice(0.2)
    ex = moyal_expansion(f, g, 2, lat)
    assert len(ex.terms) == 3 and ex.lattice is lat
    full = moyal_truncated(f, g, 2, 0.2, at=lat)
    assert np.max(np.abs(ex.total().values - full.values)) == 0.0
    assert np.max(np.abs(ex.total(0).values - ex.terms[0].values)) == 0.0


@pytest.mark.parametrize("bad", [-1, MAX_ORDER + 1])
def test_order_cap(bad):
    f, g = pair()
    with pytest.raises(ValueError):
        moyal_term(f, g, bad, at=PTS)


def test_shape_mismatch():
    A = matrix_symbol([(gaussian_symbol(), np.eye(2))])
    B = matrix_symbol([(gaussian_symbol(), np.eye(3))])
    with pytest.raises(ValueError):
        moyal_term(A, B, 0, at=PTS)


# exact product ------------------------------------------------------------

def test_exact_unit():
    grid = make_grid(64, 16.0)
    _, g = pair()
    out = moyal_exact(constant_symbol(1.0), g, 0.5, grid, check=False)
    assert np.max(np.abs(out.values - g.sample(grid.lattice(0.5)).values)) < 1e-8


def test_exact_potential_square():
    grid = make_grid(64, 16.0)
    V = bump()
    out = moyal_exact(V, V, 0.5, grid, check=False).scalar
    X_, _ = grid.lattice(0.5).mesh()
    assert np.max(np.abs(out - np.exp(-2 * X_ ** 2))) < 1e-8


@pytest.mark.parametrize("eps", [0.7, 0.5])
def test_exact_against_quadrature(eps):
    f, g = pair()
    grid = make_grid(64, 16.0)
    ex = moyal_exact(f, g, eps, grid).scalar
    lat = grid.lattice(eps)
    idx = [(32, 32), (30, 34), (36, 29), (33, 31), (28, 36)]
    x = np.array([lat.x[i] for i, _ in idx])
    xi = np.array([lat.xi[j] for _, j in idx])
    want = moyal_quadrature(f, g, eps, x, xi)
    got = np.array([ex[i, j] for i, j in idx])
    assert np.max(np.abs(got - want)) < 1e-10


def test_exact_is_associative():
    grid = make_grid(80, 16.0)
    eps = 0.5
    f, g = pair()
    h = gaussian_symbol(0.1, -0.3, 0.9, 1.0)
    from weyllab.quantize import weyl_quantize
    A, B, C = (weyl_quantize(s, grid, eps).matrix for s in (f, g, h))
    left = weyl_quantize(moyal_exact(f, g, eps, grid), check=False).matrix @ C
    right = A @ weyl_quantize(moyal_exact(g, h, eps, grid), check=False).matrix
    assert np.max(np.abs(left - right)) < 1e-10


# commutators --------------------------------------------------------------

def test_scalar_commutator_zeroth_order():
    f, g = pair()
    v = moyal_term(f, g, 0, at=PTS) - moyal_term(g, f, 0, at=PTS)
    assert np.max(np.abs(v)) == 0.0


def test_matrix_commutator_zeroth_order():
    s1 = np.array([[0, 1], [1, 0]], complex)
    s3 = np.diag([1.0 + 0j, -1.0])
    F = matrix_symbol([(gaussian_symbol(), s1)])
    G = matrix_symbol([(gaussian_symbol(0.2), s3)])
    lat = make_grid(32, 12.0).lattice(0.5)
    c = moyal_commutator(F, G, 0.5, mode="truncated", N=0, at=lat).values
    Xg, XIg = lat.mesh()
    want = F.matrix(Xg, XIg) @ G.matrix(Xg, XIg) - G.matrix(Xg, XIg) @ F.matrix(Xg, XIg)
    assert np.max(np.abs(want)) > 0.5
    assert np.max(np.abs(c - want)) < 1e-14


def test_commutator_modes_agree():
    # only odd orders survive in the commutator: going from N=1 to N=3 gains about eps^-2
    f, g = pair()
    grid = make_grid(256, 13.0)
    eps = 0.1
    ex = moyal_commutator(f, g, eps, grid=grid)
    r1 = (ex - moyal_commutator(f, g, eps, mode="truncated", N=1, grid=grid)).max_abs()
    r3 = (ex - moyal_commutator(f, g, eps, mode="truncated", N=3, grid=grid)).max_abs()
    assert r3 < 1e-5
    assert r1 / r3 > 50


def test_commutator_mode_validation():
    f, g = pair()
    with pytest.raises(ValueError):
        moyal_commutator(f, g, 0.1, mode="bogus", grid=make_grid(16, 8.0))


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_first_order_antisymmetric(x, xi):
    f, g = pair()
    a = moyal_term(f, g, 1, at=(np.array(x), np.array(xi)))
    b = moyal_term(g, f, 1, at=(np.array(x), np.array(xi)))
    assert abs(a + b).max() < 1e-14
