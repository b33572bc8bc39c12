import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weyllab.dynamics import (FlowBlowUpError, HamiltonianSpectrum, classical_observable, egorov_error,
                              ehrenfest_track, flow_function, flow_jacobian_det, hamilton_flow,
                              heisenberg_observable, loglog_slope, make_wavepacket, operator_norm,
                              quantum_propagator, refinement_ratio, wigner_state_error)
from weyllab.phasespace import constant_symbol, gaussian_symbol, make_grid, polynomial_symbol
from weyllab.quantize import momentum_operator, position_operator, weyl_quantize, wigner_transform

HARMONIC = polynomial_symbol({(0, 2): 0.5, (2, 0): 0.5}, "harmonic")
FREE = polynomial_symbol({(0, 2): 0.5}, "free")
QUARTIC = polynomial_symbol({(0, 2): 0.5, (2, 0): 0.5, (4, 0): 0.1}, "quartic")


def rotation(x, xi, t):
    return x * np.cos(t) + xi * np.sin(t), -x * np.sin(t) + xi * np.cos(t)


# classical flow ------------------------------------------------------------

def test_rotation_full_period():
    x0, xi0 = np.array([1.0, -0.3, 0.0]), np.array([0.0, 0.8, -1.2])
    fm = hamilton_flow(HARMONIC, (x0, xi0), 2 * np.pi, dt=1e-3, integrator="rk4")
    x, xi = fm.at(2 * np.pi)
    assert max(np.max(np.abs(x - x0)), np.max(np.abs(xi - xi0))) < 1e-8


@pytest.mark.parametrize("integrator", ["stormer_verlet", "rk4"])
@pytest.mark.parametrize("t", [0.5, 1.7])
def test_rotation_oracle(integrator, t):
    x0, xi0 = np.linspace(-2, 2, 5), np.linspace(1, -1, 5)
    x, xi = hamilton_flow(HARMONIC, (x0, xi0), t, dt=1e-3, integrator=integrator).at(t)
    xr, xir = rotation(x0, xi0, t)
    tol = 1e-6 if integrator == "stormer_verlet" else 1e-12
    assert max(np.max(np.abs(x - xr)), np.max(np.abs(xi - xir))) < tol


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3))
def test_free_motion(x0, xi0, t):
    x, xi = hamilton_flow(FREE, (np.array([x0]), np.array([xi0])), t, dt=1e-2).at(t)
    assert x[0] == pytest.approx(x0 + t * xi0, abs=1e-12)
    assert xi[0] == xi0


def test_liouville_plaquette():
    x0, xi0 = np.array([0.5, -1.0, 1.2]), np.array([0.3, 0.7, -0.4])
    det = flow_jacobian_det(QUARTIC, (x0, xi0), 1.5)
    assert np.max(np.abs(det - 1)) < 1e-4


@pytest.mark.parametrize("integrator, order", [("stormer_verlet", 2), ("rk4", 4)])
def test_refinement_ratio(integrator, order):
    r = refinement_ratio(QUARTIC, (np.array([1.0]), np.array([0.5])), 1.0, dt=2e-2, integrator=integrator)
    assert abs(np.log2(r) - order) < 0.2


def test_multiple_times_and_backward():
    x0, xi0 = np.array([1.0]), np.array([0.0])
    fm = hamilton_flow(HARMONIC, (x0, xi0), [0.5, 1.0, 0.25], dt=1e-3, integrator="rk4")
    for t in fm.times:
        x, xi = fm.at(t)
        xr, xir = rotation(x0, xi0, t)
        assert abs(x[0] - xr[0]) < 1e-10 and abs(xi[0] - xir[0]) < 1e-10
    x, _ = hamilton_flow(HARMONIC, (x0, xi0), -1.0, integrator="rk4").at(-1.0)
    assert abs(x[0] - np.cos(1.0)) < 1e-10
    with pytest.raises(KeyError):
        fm.at(3.0)


def test_energy_drift_verlet_bounded():
    fm = hamilton_flow(QUARTIC, (np.array([1.5]), np.array([0.0])), [5.0, 10.0], dt=1e-2)
    assert fm.energy_drift(QUARTIC) < 1e-3


def test_flow_errors():
    mixed = polynomial_symbol({(1, 1): 1.0, (0, 2): 0.5})
    with pytest.raises(ValueError, match="separable"):
        hamilton_flow(mixed, (np.zeros(1), np.zeros(1)), 1.0)
    with pytest.raises(ValueError):
        hamilton_flow(HARMONIC, (np.zeros(1), np.zeros(1)), 1.0, integrator="euler")
    with pytest.raises(ValueError):
        hamilton_flow(HARMONIC, (np.zeros(1), np.zeros(1)), 1.0, dt=0.0)
    blow = polynomial_symbol({(0, 2): 0.5, (4, 0): -1.0})
    with pytest.raises(FlowBlowUpError):
        hamilton_flow(blow, (np.array([2.0]), np.array([0.0])), 5.0, dt=1e-3, integrator="rk4")


def test_mixed_hamiltonian_rk4():
    # h = x xi: x(t) = x0 e^t, xi(t) = xi0 e^-t
    h = polynomial_symbol({(1, 1): 1.0})
    x, xi = hamilton_flow(h, (np.array([0.5]), np.array([2.0])), 1.0, integrator="rk4").at(1.0)
    assert abs(x[0] - 0.5 * np.e) < 1e-10 and abs(xi[0] - 2.0 / np.e) < 1e-10


# quantum propagation --------------------------------------------------------

@pytest.fixture(scope="module")
def osc():
    g = make_grid(128, 16.0)
    eps = 0.1
    return g, eps, HamiltonianSpectrum.of(weyl_quantize(HARMONIC, g, eps, check=False))


def test_propagator_zero_is_identity(osc):
    g, eps, spec = osc
    assert np.max(np.abs(spec.propagator(0.0).matrix - np.eye(128))) < 1e-12


def test_group_law(osc):
    _, _, spec = osc
    U = spec.propagator(0.3).matrix @ spec.propagator(0.45).matrix
    assert operator_norm(U - spec.propagator(0.75).matrix) < 1e-9
    assert spec.propagator(0.75).unitarity_defect() < 1e-12


def test_oscillator_levels(osc):
    _, eps, spec = osc
    np.testing.assert_allclose(spec.w[:8], eps * (np.arange(8) + 0.5), atol=1e-10)


def test_ground_state_autocorrelation(osc):
    g, eps, spec = osc
    psi = make_wavepacket("coherent", {}, g, eps)
    amp = psi.inner(spec.propagator(2 * np.pi).apply(psi))
    assert abs(abs(amp) - 1) < 1e-8


def test_propagator_eps_mismatch(osc):
    g, eps, spec = osc
    with pytest.raises(ValueError):
        quantum_propagator(spec.H, 1.0, eps=2 * eps)


def test_nonhermitian_rejected():
    g = make_grid(32, 14.0)
    H = weyl_quantize(gaussian_symbol(amp=1j), g, 1.0)
    with pytest.raises(ValueError, match="hermitian"):
        HamiltonianSpectrum.of(H)


def test_heisenberg_basics(osc):
    g, eps, spec = osc
    f = gaussian_symbol(0.5, 0.0, 1.0, 0.35)
    A = weyl_quantize(f, g, eps)
    assert np.max(np.abs(heisenberg_observable(f, spec.propagator(0.0)).matrix - A.matrix)) < 1e-12
    one = heisenberg_observable(constant_symbol(1.0), spec.propagator(1.3), check=False)
    assert np.max(np.abs(one.matrix - np.eye(128))) < 1e-10
    assert heisenberg_observable(f, spec.propagator(1.3)).hermiticity_defect() < 1e-9


def test_classical_observable_free_linear():
    g = make_grid(64, 12.0)
    eps, t = 0.2, 0.7
    Fc = classical_observable(polynomial_symbol({(1, 0): 1.0}), FREE, t, eps, g, dt=0.05)
    want = position_operator(g, eps).matrix + t * momentum_operator(g, eps).matrix
    # compare away from the Nyquist row, where the spectral P is symmetrized
    assert np.max(np.abs(Fc.matrix - want)) < 1e-9


def test_classical_observable_period():
    g = make_grid(128, 16.0)
    eps = 0.2
    f = gaussian_symbol(0.8, 0.3, 0.7, 0.7)
    F0 = classical_observable(f, HARMONIC, 0.0, eps, g)
    F1 = classical_observable(f, HARMONIC, 2 * np.pi, eps, g, dt=1e-2, integrator="rk4")
    assert np.max(np.abs(F0.matrix - weyl_quantize(f, g, eps).matrix)) == 0.0
    assert operator_norm(F1 - F0) / operator_norm(F0) < 1e-6


def test_egorov_zero_time():
    g = make_grid(64, 12.0)
    assert egorov_error(QUARTIC, gaussian_symbol(sx=0.5, sxi=0.5), 0.0, 0.2, g) == 0.0


def test_egorov_quadratic_floor():
    g = make_grid(128, 5.6)
    err = egorov_error(HARMONIC, gaussian_symbol(0, 0, 0.35, 0.35), 1.0, 0.05, g)
    assert err < 1e-5


def test_state_error_zero_and_quadratic():
    g = make_grid(128, 8.0)
    eps = 0.1
    psi = make_wavepacket("coherent", dict(x0=0.6, xi0=-0.3), g, eps)
    f = gaussian_symbol(0, 0, 0.5, 0.5)
    assert wigner_state_error(HARMONIC, psi, f, 0.0, eps) == 0.0
    assert wigner_state_error(HARMONIC, psi, f, 1.0, eps, integrator="rk4") < 1e-6


def test_operator_norm_power_iteration():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((300, 300)) / 20
    assert operator_norm(m, tol=1e-12) == pytest.approx(np.linalg.norm(m, 2), rel=1e-5)


def test_loglog_slope():
    eps = [0.2, 0.1, 0.05]
    assert loglog_slope(eps, [3 * e ** 2 for e in eps]) == pytest.approx(2.0)
    assert np.isnan(loglog_slope(eps, [1.0, 0.0, 1.0]))


# Ehrenfest -----------------------------------------------------------------

def test_free_momentum_conserved():
    g = make_grid(128, 16.0)
    eps = 0.1
    H = weyl_quantize(FREE, g, eps, check=False)
    psi = make_wavepacket("coherent", dict(x0=-1.0, xi0=0.5), g, eps)
    tab = ehrenfest_track(psi, H, FREE, [0.0, 1.0, 2.0])
    assert np.max(np.abs(tab.p - tab.p[0])) < 1e-8


def test_harmonic_trajectory():
    g = make_grid(256, 16.0)
    eps = 0.05
    H = weyl_quantize(HARMONIC, g, eps, check=False)
    psi = make_wavepacket("coherent", dict(x0=1.0, xi0=0.5), g, eps)
    times = np.linspace(0, 2, 5)
    tab = ehrenfest_track(psi, H, HARMONIC, times, integrator="rk4")
    xr, xir = rotation(1.0, 0.5, times)
    assert np.max(np.abs(tab.q - xr)) < 1e-6 and np.max(np.abs(tab.p - xir)) < 1e-6
    assert np.max(np.abs(tab.q - tab.q_cl)) < 1e-6


def test_quartic_force_gap_grows_with_width():
    g = make_grid(256, 16.0)
    eps = 0.1
    H = weyl_quantize(QUARTIC, g, eps, check=False)
    dV = lambda y: y + 0.4 * y ** 3
    # matched early times: the broad packet then drifts toward the well bottom and the gap shrinks
    times = [0.0, 0.05, 0.1]
    gaps = {}
    for name, w in (("narrow", 0.5), ("broad", 2.0)):
        env = lambda u, w=w: np.exp(-0.5 * (u / w) ** 2)
        psi = make_wavepacket("coherent", dict(x0=1.0, envelope=env), g, eps)
        gaps[name] = ehrenfest_track(psi, H, QUARTIC, times, dV=dV).force_gap
    assert np.all(gaps["broad"] > 10 * gaps["narrow"])


# wavepackets ---------------------------------------------------------------

def test_coherent_variance_scales_with_eps():
    g = make_grid(256, 16.0)
    eps = [0.2, 0.1, 0.05]
    var = []
    for e in eps:
        psi = make_wavepacket("coherent", dict(x0=0.7, xi0=0.4), g, e)
        rho = np.abs(psi.values) ** 2 * g.dx
        m = np.sum(rho * g.x)
        var.append(np.sum(rho * (g.x - m) ** 2))
    assert abs(loglog_slope(eps, var) - 1) < 0.1
    np.testing.assert_allclose(var, np.array(eps) / 2, rtol=1e-8)


def test_coherent_momentum_sign():
    g = make_grid(256, 16.0)
    eps = 0.1
    psi = make_wavepacket("coherent", dict(x0=0.0, xi0=0.8), g, eps)
    p = np.real(psi.inner(momentum_operator(g, eps) @ psi))
    assert p == pytest.approx(0.8, abs=1e-8)


def test_momentum_localized():
    g = make_grid(256, 16.0)
    eps = 0.1
    psi = make_wavepacket("momentum_localized", dict(xi0=-0.5), g, eps)
    assert np.real(psi.inner(momentum_operator(g, eps) @ psi)) == pytest.approx(-0.5, abs=1e-8)


def test_wkb_constant_phase():
    g = make_grid(128, 16.0)
    psi = make_wavepacket("wkb", dict(rho=lambda y: np.exp(-y ** 2)), g, 0.1)
    assert np.max(np.abs(psi.values.imag)) == 0.0
    assert abs(psi.inner(momentum_operator(g, 0.1) @ psi)) < 1e-8


def test_wkb_wigner_concentrates():
    g = make_grid(256, 16.0)
    # chirp kept well below the grid Nyquist at the smallest eps
    S = lambda y: 0.15 * y ** 2
    mass = []
    for eps in (0.2, 0.1, 0.05):
        psi = make_wavepacket("wkb", dict(rho=lambda y: np.exp(-y ** 2), S=S), g, eps)
        W = wigner_transform(psi, psi, eps)
        X, XI = np.meshgrid(W.x, W.xi, indexing="ij")
        near = np.abs(XI - 0.3 * X) < 0.15
        mass.append(np.sum(W.values.real * near) * g.dx * eps * g.dkappa / np.sqrt(2 * np.pi))
    assert mass[0] < mass[1] < mass[2] < 1.0 + 1e-9


@pytest.mark.parametrize("kind, params", [("bogus", {}), ("wkb", dict(rho=lambda y: -np.ones_like(y))),
                                          ("wkb", dict(rho=lambda y: np.zeros_like(y)))])
def test_wavepacket_errors(kind, params):
    with pytest.raises(ValueError):
        make_wavepacket(kind, params, make_grid(16, 8.0), 0.1)


def test_flow_function_is_callable():
    phi = flow_function(HARMONIC, np.pi / 2, integrator="rk4")
    x, xi = phi(np.array([1.0]), np.array([0.0]))
    assert abs(x[0]) < 1e-10 and abs(xi[0] + 1) < 1e-10
