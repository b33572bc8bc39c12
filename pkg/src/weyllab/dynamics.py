"""Classical flows, quantum propagators and the Egorov comparison harness.

Quantum evolution uses a dense eigendecomposition, so no time-stepping error
enters the semiclassical comparisons.  Classical flows are integrated with
Stormer-Verlet (separable Hamiltonians) or classical RK4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .phasespace import Lattice, PhaseSpaceGrid, Symbol
from .quantize import (QuantizedOperator, WaveFunction, momentum_operator, phase_space_expectation,
                       position_operator, weyl_quantize)

__all__ = [
    "FlowMap",
    "Propagator",
    "HamiltonianSpectrum",
    "FlowBlowUpError",
    "hamilton_flow",
    "flow_function",
    "refinement_ratio",
    "flow_jacobian_det",
    "quantum_propagator",
    "heisenberg_observable",
    "classical_observable",
    "operator_norm",
    "egorov_error",
    "wigner_state_error",
    "EhrenfestTable",
    "ehrenfest_track",
    "make_wavepacket",
    "loglog_slope",
]

BLOWUP = 1e6
BLOWUP_CHECK = 32  # steps between blow-up checks
SVD_LIMIT = 256


class FlowBlowUpError(FloatingPointError):
    """A trajectory left every reasonable region of phase space."""


# --------------------------------------------------------------------------
# classical flow
# --------------------------------------------------------------------------

def _grad(h: Symbol):
    hx, hxi = h.partial(1, 0), h.partial(0, 1)
    return (lambda x, xi: np.real(hx(x, xi))), (lambda x, xi: np.real(hxi(x, xi)))


def _is_separable(h: Symbol, rng=np.random.default_rng(0)) -> bool:
    x = rng.uniform(-2, 2, 16)
    xi = rng.uniform(-2, 2, 16)
    mixed = np.asarray(h.partial(1, 1)(x, xi))
    scale = max(np.max(np.abs(h.partial(1, 0)(x, xi))), np.max(np.abs(h.partial(0, 1)(x, xi))), 1.0)
    return bool(np.max(np.abs(mixed)) < 1e-8 * scale)


def _verlet_step(hx, hxi, x, xi, dt):
    xi = xi - 0.5 * dt * hx(x, xi)
    x = x + dt * hxi(x, xi)
    xi = xi - 0.5 * dt * hx(x, xi)
    return x, xi


def _rk4_step(hx, hxi, x, xi, dt):
    k1x, k1p = hxi(x, xi), -hx(x, xi)
    k2x, k2p = hxi(x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p), -hx(x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p)
    k3x, k3p = hxi(x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p), -hx(x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p)
    k4x, k4p = hxi(x + dt * k3x, xi + dt * k3p), -hx(x + dt * k3x, xi + dt * k3p)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            xi + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p))


_STEPPERS = {"stormer_verlet": _verlet_step, "rk4": _rk4_step}


def _check_blowup(x, xi, t):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))) or \
            max(np.max(np.abs(x), initial=0), np.max(np.abs(xi), initial=0)) > BLOWUP:
        raise FlowBlowUpError(f"trajectory blow-up before t = {t}")


def _integrate(h: Symbol, x, xi, times, dt, integrator):
    if integrator not in _STEPPERS:
        raise ValueError(f"unknown integrator {integrator!r}")
    if integrator == "stormer_verlet" and not _is_separable(h):
        raise ValueError("stormer_verlet needs a separable Hamiltonian T(xi) + V(x)")
    if not dt > 0:
        raise ValueError("dt must be positive")
    step = _STEPPERS[integrator]
    hx, hxi = _grad(h)
    x = np.array(x, dtype=float)
    xi = np.array(xi, dtype=float)
    out, t_now = [], 0.0
    for t in times:
        span = t - t_now
        n = int(np.ceil(abs(span) / dt - 1e-9))
        s = span / n if n else 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            if n and integrator == "stormer_verlet":
                # leapfrog form: the closing half kick is merged with the next opening one
                xi = xi - 0.5 * s * hx(x, xi)
                for i in range(n):
                    x = x + s * hxi(x, xi)
                    xi = xi - (s if i < n - 1 else 0.5 * s) * hx(x, xi)
                    if i % BLOWUP_CHECK == 0:
                        _check_blowup(x, xi, t)
            elif n:
                for i in range(n):
                    x, xi = step(hx, hxi, x, xi, s)
                    if i % BLOWUP_CHECK == 0:
                        _check_blowup(x, xi, t)
        if n:
            _check_blowup(x, xi, t)
        out.append((x.copy(), xi.copy()))
        t_now = t
    return out


@dataclass(frozen=True)
class FlowMap:
    """Initial points and their images at the requested times."""
    x0: np.ndarray
    xi0: np.ndarray
    times: tuple
    points: tuple  # ((x, xi) per time)
    integrator: str
    dt: float

    def at(self, t: float):
        for s, p in zip(self.times, self.points):
            if abs(s - t) < 1e-12:
                return p
        raise KeyError(f"time {t} not stored")

    def energy_drift(self, h: Symbol) -> float:
        e0 = np.real(h(self.x0, self.xi0))
        return float(max(np.max(np.abs(np.real(h(x, xi)) - e0)) for x, xi in self.points))


def _points(X0):
    if isinstance(X0, Lattice):
        return X0.mesh()
    x, xi = X0
    return np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))


def hamilton_flow(h: Symbol, X0, t, dt: float = 1e-3, integrator: str = "stormer_verlet") -> FlowMap:
    """Integrate dx/dt = d_xi h, dxi/dt = -d_x h from X0 (Lattice or (x, xi)).

    ``t`` is a single time or an increasing/decreasing sequence of times.
    """
    if h.d_fast != 1:
        raise ValueError("hamilton_flow needs a scalar Hamiltonian")
    times = tuple(float(s) for s in np.atleast_1d(t))
    x0, xi0 = _points(X0)
    pts = _integrate(h, x0, xi0, times, dt, integrator)
    return FlowMap(np.array(x0), np.array(xi0), times, tuple(pts), integrator, float(dt))


def flow_function(h: Symbol, t: float, dt: float = 1e-3, integrator: str = "stormer_verlet"):
    """phi_t as a broadcasting map (x, xi) -> (x', xi'), for Symbol.compose."""
    def phi(x, xi):
        if t == 0:
            return x, xi
        return _integrate(h, x, xi, (float(t),), dt, integrator)[0]
    return phi


def refinement_ratio(h: Symbol, X0, t: float, dt: float = 1e-3, integrator: str = "stormer_verlet") -> float:
    """|phi^dt - phi^{dt/2}| / |phi^{dt/2} - phi^{dt/4}|, about 2^p for an order-p method."""
    res = []
    for s in (dt, dt / 2, dt / 4):
        x, xi = hamilton_flow(h, X0, t, s, integrator).points[0]
        res.append(np.concatenate([np.ravel(x), np.ravel(xi)]))
    a = np.max(np.abs(res[0] - res[1]))
    b = np.max(np.abs(res[1] - res[2]))
    return float(a / b) if b > 0 else float("inf")


def flow_jacobian_det(h: Symbol, X0, t: float, dt: float = 1e-3, delta: float = 1e-5,
                      integrator: str = "stormer_verlet") -> np.ndarray:
    """det D phi_t by central differences of the flow (Liouville check)."""
    x, xi = _points(X0)
    x, xi = np.ravel(x), np.ravel(xi)
    pts = [(x + delta, xi), (x - delta, xi), (x, xi + delta), (x, xi - delta)]
    img = [hamilton_flow(h, p, t, dt, integrator).points[0] for p in pts]
    dx_dx = (img[0][0] - img[1][0]) / (2 * delta)
    dxi_dx = (img[0][1] - img[1][1]) / (2 * delta)
    dx_dxi = (img[2][0] - img[3][0]) / (2 * delta)
    dxi_dxi = (img[2][1] - img[3][1]) / (2 * delta)
    return dx_dx * dxi_dxi - dx_dxi * dxi_dx


# --------------------------------------------------------------------------
# quantum propagation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSpectrum:
    """Cached eigendecomposition H = V diag(w) V^dagger."""
    H: QuantizedOperator
    w: np.ndarray
    V: np.ndarray

    @classmethod
    def of(cls, H: QuantizedOperator, tol: float = 1e-8) -> "HamiltonianSpectrum":
        m = H.matrix
        scale = max(np.max(np.abs(m)), 1e-300)
        if np.max(np.abs(m - m.conj().T)) > tol * scale:
            raise ValueError("Hamiltonian is not hermitian within tolerance")
        w, V = np.linalg.eigh(0.5 * (m + m.conj().T))
        return cls(H, w, V)

    def propagator(self, t: float) -> "Propagator":
        ph = np.exp(-1j * t * self.w / self.H.eps)
        U = (self.V * ph) @ self.V.conj().T
        return Propagator(QuantizedOperator(U, self.H.eps, self.H.grid, self.H.d_fast), float(t), self)


@dataclass(frozen=True)
class Propagator:
    """U(t) = exp(-i t H / eps)."""
    U: QuantizedOperator
    t: float
    spectrum: HamiltonianSpectrum = field(repr=False)

    @property
    def eps(self):
        return self.U.eps

    @property
    def matrix(self):
        return self.U.matrix

    def apply(self, psi: WaveFunction) -> WaveFunction:
        return self.U @ psi

    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def quantum_propagator(H: QuantizedOperator, t: float, eps: Optional[float] = None,
                       spectrum: Optional[HamiltonianSpectrum] = None) -> Propagator:
    if eps is not None and abs(eps - H.eps) > 1e-14 * eps:
        raise ValueError("eps does not match the operator")
    spectrum = spectrum or HamiltonianSpectrum.of(H)
    return spectrum.propagator(t)


def heisenberg_observable(f, U: Propagator, check: bool = True) -> QuantizedOperator:
    """F_qm(t) = U^dagger Op(f) U for a Symbol or an already quantized f."""
    A = f if isinstance(f, QuantizedOperator) else weyl_quantize(f, U.U.grid, U.eps, check=check)
    return U.U.H @ A @ U.U


def classical_observable(f: Symbol, h: Symbol, t: float, eps: float, grid: PhaseSpaceGrid,
                         dt: float = 1e-3, integrator: str = "stormer_verlet") -> QuantizedOperator:
    """F_cl(t) = Op(f o phi_t).

    The flow is evaluated at the quantization points.  A decay failure of the
    flowed symbol means trajectories carried mass out of the box.
    """
    ft = f.compose(flow_function(h, t, dt, integrator), name=f"{f.name}(t={t})")
    return weyl_quantize(ft, grid, eps, check=f.decays)


def operator_norm(A, tol: float = 1e-8, maxiter: int = 500, seed: int = 0) -> float:
    """Spectral norm: dense SVD up to 256, power iteration on A^dagger A above."""
    m = A.matrix if isinstance(A, QuantizedOperator) else np.asarray(A)
    if m.shape[0] <= SVD_LIMIT:
        return float(sla.svdvals(m)[0])
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.shape[1]) + 1j * rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    s_old = 0.0
    for _ in range(maxiter):
        w = m.conj().T @ (m @ v)
        s = np.sqrt(np.linalg.norm(w))
        v = w / np.linalg.norm(w)
        if abs(s - s_old) <= tol * s:
            break
        s_old = s
    return float(np.linalg.norm(m @ v))


def egorov_error(h: Symbol, f: Symbol, t: float, eps: float, grid: PhaseSpaceGrid,
                 dt: float = 1e-3, integrator: str = "stormer_verlet",
                 spectrum: Optional[HamiltonianSpectrum] = None) -> float:
    """||F_qm(t) - F_cl(t)|| in the spectral norm."""
    if t == 0:
        return 0.0
    if spectrum is None:
        spectrum = HamiltonianSpectrum.of(weyl_quantize(h, grid, eps, check=False))
    U = spectrum.propagator(t)
    Fq = heisenberg_observable(f, U)
    Fc = classical_observable(f, h, t, eps, grid, dt, integrator)
    return operator_norm(Fq - Fc)


def wigner_state_error(h: Symbol, psi: WaveFunction, f: Symbol, t: float, eps: float,
                       dt: float = 1e-3, integrator: str = "stormer_verlet",
                       spectrum: Optional[HamiltonianSpectrum] = None) -> float:
    """|int f (mu_qm(t) - mu_cl(t))|.

    mu_cl(t) = W(psi) o phi_{-t}; since phi_t preserves phase-space volume the
    pairing is evaluated as int (f o phi_t) W(psi), which avoids resampling W.
    """
    if t == 0:
        return 0.0
    grid = psi.grid
    if spectrum is None:
        spectrum = HamiltonianSpectrum.of(weyl_quantize(h, grid, eps, check=False))
    psi_t = spectrum.propagator(t).apply(psi)
    q = phase_space_expectation(f, psi_t, eps)
    ft = f.compose(flow_function(h, t, dt, integrator))
    c = phase_space_expectation(ft, psi, eps)
    return float(abs(q - c))


# --------------------------------------------------------------------------
# Ehrenfest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EhrenfestTable:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    q_cl: np.ndarray
    p_cl: np.ndarray
    force_gap: Optional[np.ndarray] = None  # |<-V'(Q)> - (-V'(<Q>))|


def ehrenfest_track(psi: WaveFunction, H: QuantizedOperator, h: Symbol, times: Sequence[float],
                    dt: float = 1e-3, dV: Optional[Callable] = None,
                    integrator: str = "stormer_verlet") -> EhrenfestTable:
    """Quantum expectations of Q and P next to the classical trajectory from (q(0), p(0))."""
    eps, grid = H.eps, H.grid
    spec = HamiltonianSpectrum.of(H)
    Q = position_operator(grid, eps)
    P = momentum_operator(grid, eps)
    qs, ps, gaps = [], [], []
    for t in times:
        pt = spec.propagator(t).apply(psi)
        qs.append(np.real(pt.inner(Q @ pt)))
        ps.append(np.real(pt.inner(P @ pt)))
        if dV is not None:
            rho = np.abs(pt.values) ** 2 * grid.dx
            gaps.append(abs(np.sum(rho * dV(grid.x)) - dV(qs[-1])))
    times = np.asarray(times, dtype=float)
    traj = hamilton_flow(h, (np.array([qs[0]]), np.array([ps[0]])), times, dt, integrator)
    qc = np.array([p[0][0] for p in traj.points])
    pc = np.array([p[1][0] for p in traj.points])
    return EhrenfestTable(times, np.array(qs), np.array(ps), qc, pc,
                          np.array(gaps) if dV is not None else None)


# --------------------------------------------------------------------------
# wavepackets
# --------------------------------------------------------------------------

def _gauss(u):
    return np.exp(-0.5 * u ** 2)


def make_wavepacket(kind: str, params: Dict, grid: PhaseSpaceGrid, eps: float) -> WaveFunction:
    """Normalized wavepackets.

    coherent:            eps^-1/4 e^{(i/eps) xi0 (x - x0)} env((x - x0)/sqrt(eps))
    momentum_localized:  Fourier profile env((eps k - xi0)/sqrt(eps))
    wkb:                 sqrt(rho(x)) e^{(i/eps) S(x)}

    The phase sign puts the packets at momentum +xi0 (resp. grad S) with
    the convention P = -i eps d/dx.
    """
    x = grid.x
    env = params.get("envelope", _gauss)
    if kind == "coherent":
        x0, xi0 = params.get("x0", 0.0), params.get("xi0", 0.0)
        v = eps ** -0.25 * np.exp(1j * xi0 * (x - x0) / eps) * env((x - x0) / np.sqrt(eps))
    elif kind == "momentum_localized":
        xi0 = params.get("xi0", 0.0)
        k = 2 * np.pi * np.fft.fftfreq(grid.n_x, d=grid.dx)
        spec = env((eps * k - xi0) / np.sqrt(eps)).astype(complex)
        v = np.fft.ifft(spec * np.exp(1j * k * x[0]))
    elif kind == "wkb":
        rho, S = params["rho"], params.get("S", lambda y: np.zeros_like(y))
        r = np.asarray(rho(x), dtype=float)
        if np.any(r < 0):
            raise ValueError("density must be non-negative")
        v = np.sqrt(r) * np.exp(1j * np.asarray(S(x)) / eps)
    else:
        raise ValueError(f"unknown wavepacket kind {kind!r}")
    v = np.asarray(v, dtype=complex)
    if not np.any(np.abs(v) > 0):
        raise ValueError("wavepacket parameters give a zero (unnormalizable) state")
    return WaveFunction(v, grid).normalized()


def loglog_slope(eps: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of log(err) against log(eps)."""
    e = np.asarray(err, dtype=float)
    if np.any(e <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(eps, dtype=float)), np.log(e), 1)[0])
