"""First-order space-adiabatic perturbation theory for matrix-valued symbols.

All order-zero objects are carried as pointwise first-derivative *jets*
(value, d_x, d_xi) on arbitrary arrays of phase-space points.  At first order
the Moyal product of two eps-series only needs

    (a # b)_1 = a_0 b_1 + a_1 b_0 - (i/2) {a_0, b_0},

so every defect coefficient is extracted term by term, never by fitting in
eps.  Eigenvector derivatives come from first-order perturbation theory with
the analytic derivatives of H_0.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .dynamics import HamiltonianSpectrum, operator_norm
from .moyal import moyal_truncated
from .phasespace import (Lattice, PhaseSpaceGrid, Symbol, _hermite_deriv, constant_symbol, matrix_symbol,
                         polynomial_symbol)
from .quantize import QuantizedOperator, weyl_quantize

__all__ = [
    "SIGMA",
    "GapClosureError",
    "GaugeDiscontinuityError",
    "Jet",
    "FastModel",
    "BandData",
    "SaptBundle",
    "spectral_decompose",
    "projection_pi0",
    "u0_from_bands",
    "reference_projection",
    "projection_defect",
    "pi1_diagonal",
    "commutation_defect",
    "pi1_offdiagonal",
    "unitarity_defect",
    "intertwining_defect",
    "effective_hamiltonian",
    "sapt_first_order",
    "defect_residuals",
    "offdiagonal_perturbation",
    "berry_connection",
    "born_huang",
    "berry_curvature",
    "monopole_curvature",
    "effective_observable",
    "macroscopic_check",
    "minimal_substitution_gap",
    "dirac_matrices",
    "dirac_u0",
    "dirac_diagonalize_check",
    "dirac_electric_offdiagonal",
    "bundle_symbol",
    "bo_effective_dynamics_error",
    "band_hamiltonian",
    "EffectiveDynamicsReport",
    "x_function",
    "bo_tanh_model",
    "bo_bump_model",
    "mixed_model",
    "monopole_model",
    "constant_model",
]

SIGMA = {
    0: np.eye(2, dtype=complex),
    1: np.array([[0, 1], [1, 0]], dtype=complex),
    2: np.array([[0, -1j], [1j, 0]], dtype=complex),
    3: np.array([[1, 0], [0, -1]], dtype=complex),
}

DEGENERACY_TOL = 1e-9


class GapClosureError(ValueError):
    """The relevant bands touch the rest of the spectrum."""


class GaugeDiscontinuityError(ValueError):
    """Neighbouring eigenvectors differ by a phase jump larger than pi/2."""


# --------------------------------------------------------------------------
# jets
# --------------------------------------------------------------------------

def _dag(m):
    return np.conj(np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class Jet:
    """Value and first partials of a matrix field at a set of points."""
    v: np.ndarray
    dx: np.ndarray
    dxi: np.ndarray

    def __matmul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.v @ other.v, self.dx @ other.v + self.v @ other.dx,
                       self.dxi @ other.v + self.v @ other.dxi)
        other = np.asarray(other)  # constant matrix
        return Jet(self.v @ other, self.dx @ other, self.dxi @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other)
        return Jet(other @ self.v, other @ self.dx, other @ self.dxi)

    def __add__(self, other):
        return Jet(self.v + other.v, self.dx + other.dx, self.dxi + other.dxi)

    def __sub__(self, other):
        return Jet(self.v - other.v, self.dx - other.dx, self.dxi - other.dxi)

    def __mul__(self, c):
        return Jet(c * self.v, c * self.dx, c * self.dxi)

    __rmul__ = __mul__

    @property
    def H(self):
        return Jet(_dag(self.v), _dag(self.dx), _dag(self.dxi))

    @classmethod
    def of(cls, f: Symbol, x, xi) -> "Jet":
        return cls(f.matrix(x, xi), f.partial(1, 0).matrix(x, xi), f.partial(0, 1).matrix(x, xi))

    @classmethod
    def constant(cls, M, shape) -> "Jet":
        M = np.broadcast_to(np.asarray(M, dtype=complex), tuple(shape) + np.shape(M))
        return cls(M, np.zeros_like(M), np.zeros_like(M))


def bracket(a: Jet, b: Jet) -> np.ndarray:
    """{a, b} = d_xi a d_x b - d_x a d_xi b, matrix order as written."""
    return a.dxi @ b.dx - a.dx @ b.dxi


def star1(a0: Jet, a1, b0: Jet, b1) -> np.ndarray:
    """Order-eps coefficient of (a0 + eps a1) # (b0 + eps b1)."""
    out = -0.5j * bracket(a0, b0)
    if a1 is not None:
        out = out + a1 @ b0.v
    if b1 is not None:
        out = out + a0.v @ b1
    return out


def star1_triple(a0: Jet, a1, b0: Jet, b1, c0: Jet, c1) -> np.ndarray:
    """Order-eps coefficient of a # b # c (series through first order)."""
    ab1 = star1(a0, a1, b0, b1)
    return star1(a0 @ b0, ab1, c0, c1)


def _comm(a, b):
    return a @ b - b @ a


# --------------------------------------------------------------------------
# models and bands
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FastModel:
    """H_eps = H0 + eps H1 with a relevant band set J (ascending band indices)."""
    H0: Symbol
    H1: Optional[Symbol] = None
    relevant: Tuple[int, ...] = (0,)
    gap_threshold: float = 1e-3
    name: str = ""

    def __post_init__(self):
        if len(self.relevant) < 1:
            raise ValueError("relevant band set must be non-empty")
        if any(j < 0 or j >= self.H0.d_fast for j in self.relevant):
            raise ValueError("relevant band index out of range")
        if self.H1 is not None and self.H1.d_fast != self.H0.d_fast:
            raise ValueError("H1 shape mismatch")

    @property
    def d_fast(self):
        return self.H0.d_fast


@dataclass(frozen=True)
class BandData:
    """Sorted eigenpairs with gauge-fixed vectors and their first derivatives."""
    x: np.ndarray
    xi: np.ndarray
    E: np.ndarray            # (..., d)
    phi: np.ndarray          # (..., d, d), columns are eigenvectors
    dphi_x: np.ndarray
    dphi_xi: np.ndarray
    dE_x: np.ndarray
    dE_xi: np.ndarray
    gap: float
    relevant: Tuple[int, ...]
    real_gauge: bool
    degenerate: bool

    @property
    def complement(self):
        d = self.E.shape[-1]
        return tuple(k for k in range(d) if k not in self.relevant)


def _points(where):
    if isinstance(where, Lattice):
        return where.mesh()
    x, xi = where
    return np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))


def _fix_gauge(V: np.ndarray, real: bool) -> np.ndarray:
    """Smooth phases along axis 0, then along axis 1 from the first column."""
    V = V.copy()
    shape = V.shape[:-2]
    if len(shape) == 0:
        return V

    def align(prev, cur):
        ov = np.sum(np.conj(prev) * cur, axis=-2)  # per band
        if real:
            s = np.where(np.real(ov) < 0, -1.0, 1.0)
        else:
            s = np.exp(-1j * np.angle(ov))
        return cur * s[..., None, :]

    idx0 = (slice(None),) + (0,) * (len(shape) - 1)
    line = V[idx0]
    for i in range(1, line.shape[0]):
        line[i] = align(line[i - 1], line[i])
    V[idx0] = line
    if len(shape) >= 2:
        for k in range(1, shape[1]):
            V[:, k] = align(V[:, k - 1], V[:, k])
    return V


def spectral_decompose(model: FastModel, where, gauge=None, check_gap: bool = True) -> BandData:
    """Eigen-decomposition of H0 at the points ``where`` (Lattice or (x, xi)).

    ``gauge`` is None (real gauge for real H0, parallel transport otherwise) or
    a tuple (theta, dtheta_x, dtheta_xi) of callables: the vectors are then
    multiplied by exp(i theta), a smooth non-trivial gauge.
    """
    x, xi = _points(where)
    H = model.H0.matrix(x, xi)
    if np.max(np.abs(H - _dag(H))) > 1e-10 * max(np.max(np.abs(H)), 1.0):
        raise ValueError("H0 is not hermitian")
    real = bool(np.max(np.abs(H.imag)) == 0)
    if real:
        E, V = np.linalg.eigh(H.real)
        V = V.astype(complex)
    else:
        E, V = np.linalg.eigh(H)
    d = E.shape[-1]
    J = tuple(model.relevant)
    comp = [k for k in range(d) if k not in J]
    gap = np.inf
    if comp:
        diffs = np.abs(E[..., list(J)][..., :, None] - E[..., comp][..., None, :])
        pointwise = diffs.reshape(diffs.shape[:-2] + (-1,)).min(axis=-1)
        gap = float(pointwise.min())
        if check_gap and gap < model.gap_threshold:
            at = np.unravel_index(np.argmin(pointwise), pointwise.shape)
            raise GapClosureError(f"gap {gap:.3e} below threshold at x={np.asarray(x)[at]:.4g}, "
                                  f"xi={np.asarray(xi)[at]:.4g}")
        if check_gap and gap < 10 * model.gap_threshold:
            warnings.warn(f"small gap {gap:.3e}: resolvent is badly conditioned", RuntimeWarning)
    V = _fix_gauge(V, real)
    cphase = [np.zeros(E.shape, dtype=complex), np.zeros(E.shape, dtype=complex)]
    if gauge is not None:
        theta, tx, txi = gauge
        ph = np.exp(1j * np.asarray(theta(x, xi)))
        V = V * ph[..., None, None]
        cphase = [1j * np.broadcast_to(np.asarray(tx(x, xi)), E.shape[:-1])[..., None] * np.ones(d),
                  1j * np.broadcast_to(np.asarray(txi(x, xi)), E.shape[:-1])[..., None] * np.ones(d)]
        real = False
    dE, dV = [], []
    gapmat = E[..., None, :] - E[..., :, None]  # [k, j] = E_j - E_k
    degenerate = bool(np.any((np.abs(gapmat) < DEGENERACY_TOL) & ~np.eye(d, dtype=bool)))
    safe = np.where(np.abs(gapmat) < DEGENERACY_TOL, np.inf, gapmat)
    for a, (p, q) in enumerate(((1, 0), (0, 1))):
        dH = model.H0.partial(p, q).matrix(x, xi)
        M = _dag(V) @ dH @ V  # M[k, j] = <phi_k, dH phi_j>
        dE.append(np.real(np.diagonal(M, axis1=-2, axis2=-1)).copy())
        C = M / safe
        C = C * (1 - np.eye(d)) + cphase[a][..., None, :] * np.eye(d)
        dV.append(V @ C)
    return BandData(x, xi, E, V, dV[0], dV[1], dE[0], dE[1], gap, J, real, degenerate)


def _band_jet(bands: BandData, j: int) -> Jet:
    return Jet(bands.phi[..., :, j], bands.dphi_x[..., :, j], bands.dphi_xi[..., :, j])


def projection_pi0(bands: BandData, J: Optional[Sequence[int]] = None) -> Jet:
    """pi0 = sum_J |phi_j><phi_j| with its first partials."""
    J = bands.relevant if J is None else tuple(J)
    d = bands.E.shape[-1]
    if any(j < 0 or j >= d for j in J):
        raise ValueError("band index out of range")
    P = Jet.constant(np.zeros((d, d)), bands.E.shape[:-1])
    for j in J:
        phi = Jet(bands.phi[..., :, j:j + 1], bands.dphi_x[..., :, j:j + 1], bands.dphi_xi[..., :, j:j + 1])
        P = P + phi @ phi.H
    return P


def reference_projection(d: int, J: Sequence[int]) -> np.ndarray:
    """pi_ref = sum over the first |J| canonical basis vectors."""
    P = np.zeros((d, d), dtype=complex)
    P[np.arange(len(J)), np.arange(len(J))] = 1
    return P


def _band_order(d, J):
    comp = [k for k in range(d) if k not in J]
    return list(J) + comp


def u0_from_bands(bands: BandData, J: Optional[Sequence[int]] = None) -> Jet:
    """u0 = sum_k |chi_{s(k)}><phi_k|: J bands to the first canonical vectors,
    the complement to the rest, both in ascending order."""
    J = bands.relevant if J is None else tuple(J)
    d = bands.E.shape[-1]
    order = _band_order(d, J)
    if len(set(order)) != d:
        raise ValueError("rank deficiency in the band assignment")
    rows = lambda A: _dag(A[..., :, order])
    return Jet(rows(bands.phi), rows(bands.dphi_x), rows(bands.dphi_xi))


# --------------------------------------------------------------------------
# defects
# --------------------------------------------------------------------------

def projection_defect(pi0: Jet, pi1=None) -> np.ndarray:
    """Order-eps coefficient of pi # pi - pi for pi = pi0 + eps pi1.

    With pi1 = None this is G_1 = -(i/2) {pi0, pi0}.
    """
    out = star1(pi0, pi1, pi0, pi1)
    if pi1 is not None:
        out = out - pi1
    return out


def pi1_diagonal(G1: np.ndarray, pi0: Jet) -> np.ndarray:
    P = pi0.v
    Q = np.eye(P.shape[-1]) - P
    return -P @ G1 @ P + Q @ G1 @ Q


def commutation_defect(model: FastModel, H0: Jet, pi0: Jet, pi1: np.ndarray, H1=None) -> np.ndarray:
    """Order-eps coefficient of [H_eps, pi0 + eps pi1]_#."""
    out = star1(H0, H1, pi0, pi1) - star1(pi0, pi1, H0, H1)
    return out


def pi1_offdiagonal(F1: np.ndarray, bands: BandData, J: Optional[Sequence[int]] = None) -> np.ndarray:
    """Block-offdiagonal solution of [H0, X] = -F1.

    X = -sum_J R_j F1 P_j + sum_J P_j F1 R_j with the reduced resolvents
    R_j = sum_{k not in J} |phi_k><phi_k| / (E_k - E_j).
    """
    J = bands.relevant if J is None else tuple(J)
    d = bands.E.shape[-1]
    comp = [k for k in range(d) if k not in J]
    if not comp:
        return np.zeros_like(F1)
    if bands.gap < 1e-12:
        raise GapClosureError("no gap between relevant bands and the rest")
    V, E = bands.phi, bands.E
    X = np.zeros_like(F1)
    for j in J:
        Pj = V[..., :, j:j + 1] @ _dag(V[..., :, j:j + 1])
        R = 0
        for k in comp:
            R = R + V[..., :, k:k + 1] @ _dag(V[..., :, k:k + 1]) / (E[..., k] - E[..., j])[..., None, None]
        X = X - R @ F1 @ Pj + Pj @ F1 @ R
    return X


def unitarity_defect(u0: Jet, u1=None) -> Tuple[np.ndarray, np.ndarray]:
    """(A1, a1): order-eps coefficient of u # u^dagger - 1 and a1 = -A1/2."""
    A1 = star1(u0, u1, u0.H, None if u1 is None else _dag(u1))
    return A1, -0.5 * A1


def intertwining_defect(u0: Jet, a1: np.ndarray, pi0: Jet, pi1: np.ndarray, pi_ref: np.ndarray):
    """(B1, b1, u1) from the order-eps coefficient of u' # pi # u'^dagger - pi_ref,
    u' = u0 + eps a1 u0."""
    w1 = a1 @ u0.v
    B1 = star1_triple(u0, w1, pi0, pi1, u0.H, _dag(w1))
    b1 = _comm(pi_ref, B1)
    u1 = (a1 + b1) @ u0.v
    return B1, b1, u1


@dataclass(frozen=True)
class SaptBundle:
    """First-order SAPT objects at a set of points."""
    bands: BandData
    H0: Jet
    H1: np.ndarray
    pi0: Jet
    u0: Jet
    pi_ref: np.ndarray
    G1: np.ndarray
    pi1_D: np.ndarray
    F1: np.ndarray
    pi1_OD: np.ndarray
    pi1: np.ndarray
    A1: np.ndarray
    a1: np.ndarray
    B1: np.ndarray
    b1: np.ndarray
    u1: np.ndarray
    h0: Jet
    h1: np.ndarray
    heff0: np.ndarray
    heff1: np.ndarray


def effective_hamiltonian(H0: Jet, H1: np.ndarray, u0: Jet, u1: np.ndarray, pi_ref: np.ndarray):
    """(h0, h1, heff0, heff1) with
    h1 = [u1 u0^dagger, h0] + u0 H1 u0^dagger + (i/2)({h0, u0} - {u0, H0}) u0^dagger."""
    h0 = u0 @ H0 @ u0.H
    h1 = (_comm(u1 @ _dag(u0.v), h0.v) + u0.v @ H1 @ _dag(u0.v)
          + 0.5j * (bracket(h0, u0) - bracket(u0, H0)) @ _dag(u0.v))
    return h0, h1, pi_ref @ h0.v @ pi_ref, pi_ref @ h1 @ pi_ref


def sapt_first_order(model: FastModel, where, gauge=None, pi1_extra: Optional[np.ndarray] = None) -> SaptBundle:
    """Run the first-order defect construction at the points ``where``.

    ``pi1_extra`` is added to pi1 before the intertwining step; it is meant for
    injecting block-offdiagonal perturbations in invariance tests.
    """
    bands = spectral_decompose(model, where, gauge)
    x, xi = bands.x, bands.xi
    shape = bands.E.shape[:-1]
    d = model.d_fast
    H0 = Jet.of(model.H0, x, xi)
    H1 = model.H1.matrix(x, xi) if model.H1 is not None else np.zeros(shape + (d, d), dtype=complex)
    pi0 = projection_pi0(bands)
    u0 = u0_from_bands(bands)
    pi_ref = reference_projection(d, model.relevant)
    G1 = projection_defect(pi0)
    pi1_D = pi1_diagonal(G1, pi0)
    F1 = commutation_defect(model, H0, pi0, pi1_D, H1)
    pi1_OD = pi1_offdiagonal(F1, bands)
    pi1 = pi1_D + pi1_OD
    if pi1_extra is not None:
        pi1 = pi1 + pi1_extra
    A1, a1 = unitarity_defect(u0)
    B1, b1, u1 = intertwining_defect(u0, a1, pi0, pi1, pi_ref)
    h0, h1, heff0, heff1 = effective_hamiltonian(H0, H1, u0, u1, pi_ref)
    return SaptBundle(bands, H0, H1, pi0, u0, pi_ref, G1, pi1_D, F1, pi1_OD, pi1, A1, a1, B1, b1, u1,
                      h0, h1, heff0, heff1)


def _maxnorm(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def defect_residuals(b: SaptBundle) -> dict:
    """Order-eps coefficients of the four defining identities (should vanish)."""
    proj = projection_defect(b.pi0, b.pi1)
    comm = commutation_defect(None, b.H0, b.pi0, b.pi1, b.H1)
    unit, _ = unitarity_defect(b.u0, b.u1)
    inter = star1_triple(b.u0, b.u1, b.pi0, b.pi1, b.u0.H, _dag(b.u1))
    return {
        "projection": _maxnorm(proj),
        "commutation": _maxnorm(comm),
        "unitarity": _maxnorm(unit),
        "intertwining": _maxnorm(inter),
    }


def offdiagonal_perturbation(pi0: np.ndarray, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """A random hermitian block-offdiagonal field pi0 Y (1-pi0) + h.c."""
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal(pi0.shape) + 1j * rng.standard_normal(pi0.shape)
    Q = np.eye(pi0.shape[-1]) - pi0
    X = pi0 @ Y @ Q
    return scale * (X + _dag(X))


# --------------------------------------------------------------------------
# Berry geometry
# --------------------------------------------------------------------------

def berry_connection(bands: BandData, j: int, method: str = "analytic", axis: int = 0) -> np.ndarray:
    """A = i <phi_j, d phi_j> along x (axis 0 of the point arrays).

    ``method="analytic"`` uses the perturbation-theory derivative (which
    carries the gauge phase); ``"fd"`` takes phases of overlaps between
    neighbouring gauge-fixed samples along ``axis`` (spacing from x or xi).
    """
    phi = bands.phi[..., :, j]
    if method == "analytic":
        dphi = bands.dphi_x[..., :, j]
        A = 1j * np.sum(np.conj(phi) * dphi, axis=-1)
    elif method == "fd":
        # A = -Im <phi, d phi> ~ -arg <phi_k, phi_k+1> / h, centred in the interior
        phi = np.moveaxis(phi, axis, 0)
        ov = np.sum(np.conj(phi[:-1]) * phi[1:], axis=-1)
        if np.any(np.abs(np.angle(ov)) > np.pi / 2):
            raise GaugeDiscontinuityError("phase jump above pi/2 between neighbouring points")
        c = np.moveaxis(bands.x if axis == 0 else bands.xi, axis, 0)
        A = np.empty(phi.shape[:-1])
        A[1:-1] = -np.angle(np.sum(np.conj(phi[:-2]) * phi[2:], axis=-1)) / (c[2:] - c[:-2])
        A[0] = -np.angle(ov[0]) / (c[1] - c[0])
        A[-1] = -np.angle(ov[-1]) / (c[-1] - c[-2])
        return np.moveaxis(A, 0, axis)
    else:
        raise ValueError("method must be 'analytic' or 'fd'")
    if np.max(np.abs(A.imag), initial=0) > 1e-9 * max(1.0, np.max(np.abs(A))):
        raise FloatingPointError("Berry connection has a sizeable imaginary part")
    return A.real


def born_huang(bands: BandData, j: int) -> np.ndarray:
    """<d_x phi_j, (1 - pi_j) d_x phi_j> (non-negative)."""
    phi = bands.phi[..., :, j]
    dphi = bands.dphi_x[..., :, j]
    proj = np.sum(np.conj(phi) * dphi, axis=-1)
    return np.real(np.sum(np.abs(dphi) ** 2, axis=-1) - np.abs(proj) ** 2)


def berry_curvature(model: FastModel, j: int, x1, x2, path: str = "derivative", h: float = 1e-3) -> np.ndarray:
    """Berry curvature of band j of a two-parameter family H(x1, x2).

    The parameters occupy the (x, xi) slots of the model's H0.  ``derivative``
    uses the gauge-invariant sum -2 Im sum_k <d1 phi_j|phi_k><phi_k|d2 phi_j>;
    ``plaquette`` takes -arg of the Wilson loop around an h x h square
    divided by its area.
    """
    x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
    if path == "derivative":
        H = model.H0.matrix(x1, x2)
        E, V = np.linalg.eigh(H)
        d1 = _dag(V) @ model.H0.partial(1, 0).matrix(x1, x2) @ V
        d2 = _dag(V) @ model.H0.partial(0, 1).matrix(x1, x2) @ V
        out = 0
        for k in range(E.shape[-1]):
            if k == j:
                continue
            den = (E[..., j] - E[..., k]) ** 2
            out = out + d1[..., j, k] * d2[..., k, j] / den
        return -2 * np.imag(out)
    if path == "plaquette":
        corners = [(-h / 2, -h / 2), (h / 2, -h / 2), (h / 2, h / 2), (-h / 2, h / 2)]
        vecs = []
        for a, b in corners:
            _, V = np.linalg.eigh(model.H0.matrix(x1 + a, x2 + b))
            vecs.append(V[..., :, j])
        loop = 1.0
        for i in range(4):
            loop = loop * np.sum(np.conj(vecs[i]) * vecs[(i + 1) % 4], axis=-1)
        return -np.angle(loop) / h ** 2
    raise ValueError("path must be 'derivative' or 'plaquette'")


def monopole_curvature(x1, x2, m: float) -> np.ndarray:
    return -m / (2 * (np.asarray(x1) ** 2 + np.asarray(x2) ** 2 + m ** 2) ** 1.5)


# --------------------------------------------------------------------------
# effective observables
# --------------------------------------------------------------------------

def macroscopic_check(f: Symbol, model: FastModel, where, tol: float = 1e-10) -> bool:
    """f commutes pointwise with H_eps on the sample points."""
    x, xi = _points(where)
    F = f.matrix(x, xi)
    if F.shape[-1] == 1:
        return True
    H = model.H0.matrix(x, xi)
    ok = np.max(np.abs(_comm(F, H))) < tol
    if model.H1 is not None:
        ok = ok and np.max(np.abs(_comm(F, model.H1.matrix(x, xi)))) < tol
    return bool(ok)


def effective_observable(f: Symbol, bands: BandData, model: FastModel, j: Optional[int] = None):
    """(f_eff0, f_eff1) for a macroscopic f and relevant band j.

    f_eff0 = <phi_j, f phi_j>, f_eff1 = -d_xi f_eff0 * A (i-free convention).
    """
    j = bands.relevant[0] if j is None else j
    if not macroscopic_check(f, model, (bands.x, bands.xi)):
        raise ValueError("observable is not macroscopic (does not commute with H)")
    d = model.d_fast

    def expval(g):
        G = g.matrix(bands.x, bands.xi)
        if G.shape[-1] == 1:
            G = G * np.eye(d)
        phi = bands.phi[..., :, j]
        return np.real(np.einsum("...a,...ab,...b->...", np.conj(phi), G, phi))

    f0 = expval(f)
    # d_xi <phi, f phi> = <phi, d_xi f phi> + 2 Re <d_xi phi, f phi>
    phi = bands.phi[..., :, j]
    F = f.matrix(bands.x, bands.xi)
    if F.shape[-1] == 1:
        F = F * np.eye(d)
    dphi = bands.dphi_xi[..., :, j]
    df0 = expval(f.partial(0, 1)) + 2 * np.real(np.einsum("...a,...ab,...b->...", np.conj(dphi), F, phi))
    A = berry_connection(bands, j)
    return f0, -df0 * A


def minimal_substitution_gap(f0: Callable, df0: Callable, A: Callable, x, xi, eps: float) -> np.ndarray:
    """|f0(x, xi - eps A(x)) - (f0 - eps d_xi f0 A)|: the Taylor remainder."""
    a = A(x)
    return np.abs(f0(x, xi - eps * a) - (f0(x, xi) - eps * df0(x, xi) * a))


# --------------------------------------------------------------------------
# Dirac
# --------------------------------------------------------------------------

def dirac_matrices():
    """(beta, alpha_1, alpha_2, alpha_3) in the Dirac representation."""
    Z = np.zeros((2, 2))
    beta = np.block([[np.eye(2), Z], [Z, -np.eye(2)]]).astype(complex)
    alphas = [np.block([[Z, SIGMA[k]], [SIGMA[k], Z]]) for k in (1, 2, 3)]
    return beta, alphas[0], alphas[1], alphas[2]


def _xi_alpha(xi):
    _, a1, a2, a3 = dirac_matrices()
    xi = np.asarray(xi, dtype=float)
    return xi[..., 0, None, None] * a1 + xi[..., 1, None, None] * a2 + xi[..., 2, None, None] * a3


def dirac_u0(xi, m: float) -> np.ndarray:
    """u0 = ((E + m) Id - (xi . alpha) beta) / sqrt(2 E (E + m)), E = sqrt(m^2 + xi^2)."""
    if not m > 0:
        raise ValueError("mass must be positive")
    xi = np.asarray(xi, dtype=float)
    beta = dirac_matrices()[0]
    E = np.sqrt(m ** 2 + np.sum(xi ** 2, axis=-1))[..., None, None]
    return ((E + m) * np.eye(4) - _xi_alpha(xi) @ beta) / np.sqrt(2 * E * (E + m))


def dirac_diagonalize_check(xi, m: float) -> Tuple[float, float]:
    """(unitarity residual, max |u0 H0 u0^dagger - E beta|) over the given momenta."""
    xi = np.asarray(xi, dtype=float)
    beta = dirac_matrices()[0]
    H0 = m * beta + _xi_alpha(xi)
    u = dirac_u0(xi, m)
    E = np.sqrt(m ** 2 + np.sum(xi ** 2, axis=-1))[..., None, None]
    unit = np.max(np.abs(u @ _dag(u) - np.eye(4)))
    diag = np.max(np.abs(u @ H0 @ _dag(u) - E * beta))
    return float(unit), float(diag)


def _dirac_u0_symbol(m: float, fd_step: float = 1e-2) -> Symbol:
    """u0(xi_1) for momentum along the first axis, FD derivatives."""
    def fn(x, xi):
        xi = np.asarray(xi, float)
        p = np.stack([xi, np.zeros_like(xi), np.zeros_like(xi)], axis=-1)
        return dirac_u0(np.broadcast_to(p, np.broadcast_shapes(np.shape(x), xi.shape) + (3,)), m)
    return Symbol(fn, 4, backend="fd", fd_step=fd_step, decays=False, name="u0_dirac")


def dirac_electric_offdiagonal(eps: float, m: float = 1.0, V: Optional[Symbol] = None,
                               x=None, xi=None, fd_step: float = 1e-2) -> float:
    """Max norm of the off-diagonal 2x2 blocks of u0 # (H0 + eps^2 V) # u0^dagger,
    both products truncated at N = 2 (eps = 1/c)."""
    beta, a1, _, _ = dirac_matrices()
    if V is None:
        V = x_function(lambda n, y: (-1) ** n * _hermite_deriv(y, n) * np.exp(-0.5 * y ** 2), name="V")
    H = matrix_symbol([(constant_symbol(m), beta), (polynomial_symbol({(0, 1): 1.0}), a1),
                       (V.scale(eps ** 2), np.eye(4))], name="H_dirac")
    u = _dirac_u0_symbol(m, fd_step)
    ud = u.conj()
    if x is None:
        x, xi = np.meshgrid(np.linspace(-2, 2, 9), np.linspace(-1.5, 1.5, 7), indexing="ij")
    inner = moyal_truncated(u, H, 2, eps)
    inner = Symbol(inner.func, 4, backend="fd", fd_step=fd_step, decays=False)
    out = moyal_truncated(inner, ud, 2, eps, at=(np.asarray(x, float), np.asarray(xi, float)))
    return float(max(np.max(np.abs(out[..., :2, 2:])), np.max(np.abs(out[..., 2:, :2]))))


# --------------------------------------------------------------------------
# model builders
# --------------------------------------------------------------------------

def x_function(deriv: Callable[[int, np.ndarray], np.ndarray], name: str = "", decays: bool = False) -> Symbol:
    """Scalar symbol g(x) from deriv(n, x) = g^(n)(x)."""
    def fn(x, xi):
        x = np.asarray(x, float)
        return np.broadcast_to(deriv(0, x), np.broadcast_shapes(x.shape, np.shape(xi))).copy()

    def d(x, xi, a, b):
        x = np.asarray(x, float)
        shape = np.broadcast_shapes(x.shape, np.shape(xi))
        if b > 0:
            return np.zeros(shape)
        return np.broadcast_to(deriv(a, x), shape).copy()
    return Symbol(fn, 1, derivative=d, hermitian=True, decays=decays, name=name)


def _tanh_deriv(n: int, x: np.ndarray) -> np.ndarray:
    # d/dx p(t) = p'(t) (1 - t^2) for t = tanh x
    p = np.polynomial.Polynomial([0, 1])
    q = np.polynomial.Polynomial([1, 0, -1])
    for _ in range(n):
        p = p.deriv() * q
    return p(np.tanh(x))


def _gauss_deriv(n: int, x: np.ndarray) -> np.ndarray:
    # d^n exp(-x^2), via e^{-u^2/2} with u = sqrt(2) x
    u = np.sqrt(2.0) * x
    return _hermite_deriv(u, n) * np.exp(-0.5 * u ** 2) * np.sqrt(2.0) ** n


def _kinetic():
    return polynomial_symbol({(0, 2): 0.5}, name="xi^2/2")


def bo_tanh_model(a: float = 1.0, b: float = 0.5) -> FastModel:
    """H0 = xi^2/2 + a tanh(x) sigma3 + b sigma1 (lower band relevant)."""
    H = matrix_symbol([(_kinetic(), SIGMA[0]), (x_function(_tanh_deriv, "tanh").scale(a), SIGMA[3]),
                       (constant_symbol(b), SIGMA[1])], name="bo_tanh")
    return FastModel(H, None, (0,), name="bo_tanh")


def bo_bump_model(c: float = 0.5, b: float = 1.0) -> FastModel:
    """H0 = xi^2/2 + c sigma3 + b exp(-x^2) sigma1: smooth and periodic-compatible."""
    H = matrix_symbol([(_kinetic(), SIGMA[0]), (constant_symbol(c), SIGMA[3]),
                       (x_function(_gauss_deriv, "bump").scale(b), SIGMA[1])], name="bo_bump")
    return FastModel(H, None, (0,), name="bo_bump")


def mixed_model(m: float = 1.0, amp: float = 0.5, twist: float = 0.0) -> FastModel:
    """H0 = xi^2/2 + (xi - a(x)) sigma1 + twist tanh(x) sigma2 + m sigma3, a(x) = amp tanh(x).

    With twist = 0 the electronic matrix is real; for any real 2-level model
    both partials of pi0 are multiples of one matrix, so G1 vanishes.  A
    non-zero twist makes G1 non-trivial.
    """
    tanh = x_function(_tanh_deriv, "tanh")
    terms = [(_kinetic(), SIGMA[0]), (polynomial_symbol({(0, 1): 1.0}) - tanh.scale(amp), SIGMA[1]),
             (constant_symbol(m), SIGMA[3])]
    if twist:
        terms.append((tanh.scale(twist), SIGMA[2]))
    return FastModel(matrix_symbol(terms, name="mixed"), None, (0,), name="mixed" if not twist else "mixed_twisted")


def monopole_model(m: float = 1.0) -> FastModel:
    """H(x1, x2) = x1 sigma1 + x2 sigma2 + m sigma3 (parameters in the x, xi slots)."""
    H = matrix_symbol([(polynomial_symbol({(1, 0): 1.0}), SIGMA[1]), (polynomial_symbol({(0, 1): 1.0}), SIGMA[2]),
                       (constant_symbol(m), SIGMA[3])], name="monopole")
    return FastModel(H, None, (0,), name="monopole")


def constant_model(c: float = 0.5, b: float = 0.3) -> FastModel:
    """xi^2/2 + constant electronic matrix: exact decoupling."""
    H = matrix_symbol([(_kinetic(), SIGMA[0]), (constant_symbol(c), SIGMA[3]), (constant_symbol(b), SIGMA[1])],
                      name="constant")
    return FastModel(H, None, (0,), name="constant")


# --------------------------------------------------------------------------
# effective dynamics
# --------------------------------------------------------------------------

def bundle_symbol(model: FastModel, getter: Callable[[SaptBundle], np.ndarray], gauge=None,
                  d_fast: Optional[int] = None, name: str = "") -> Symbol:
    """A Symbol evaluating a bundle quantity pointwise (no analytic derivatives)."""
    def fn(x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        return getter(sapt_first_order(model, (x, xi), gauge))
    return Symbol(fn, model.d_fast if d_fast is None else d_fast, backend="fd", decays=False, name=name)


def _newton_schulz(M: np.ndarray) -> np.ndarray:
    P = 0.5 * (M + M.conj().T)
    P2 = P @ P
    return 3 * P2 - 2 * P2 @ P


def band_hamiltonian(model: FastModel, j: int = 0, x_range: Tuple[float, float] = (-20.0, 20.0),
                     n: int = 8001) -> Symbol:
    """xi^2/2 + E_j(x) for a BO model xi^2/2 Id + H_e(x).

    E_j is tabulated once at xi = 0 and interpolated by a cubic spline (the
    flow would otherwise diagonalize at every step); outside ``x_range`` the
    spline extrapolates.  Mixed partials vanish.
    """
    from scipy.interpolate import CubicSpline

    xs = np.linspace(*x_range, n)
    spline = CubicSpline(xs, spectral_decompose(model, (xs, np.zeros_like(xs)), check_gap=False).E[:, j])

    def deriv(x, xi, a, b):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        if a and b:
            return np.zeros(x.shape)
        if b:
            return xi.copy() if b == 1 else (np.ones(x.shape) if b == 2 else np.zeros(x.shape))
        return (0.5 * xi ** 2 if a == 0 else 0.0) + spline(x, a)
    return Symbol(lambda x, xi: deriv(x, xi, 0, 0), 1, derivative=deriv, hermitian=True, decays=False,
                  name=f"band{j}")


@dataclass(frozen=True)
class EffectiveDynamicsReport:
    unitary_error: float
    egorov_error: float
    leakage: float
    eps: float
    t: float


def bo_effective_dynamics_error(model: FastModel, grid: PhaseSpaceGrid, eps: float, t: float,
                                f: Optional[Symbol] = None, dt: float = 1e-3) -> EffectiveDynamicsReport:
    """Compare full and first-order effective dynamics of a BO model.

    unitary_error = ||e^{-itH/eps} Pi - u0^dagger e^{-it h_eff/eps} Pi_ref u0 Pi||
    egorov_error  = ||Pi (F_qm(t) - u0^dagger Pi_ref Op(f_eff0 o phi_t) Pi_ref u0) Pi||
    leakage       = ||(1 - Pi) e^{-itH/eps} Pi||

    Pi is the hermitized Op(pi0 + eps pi1) after one Newton-Schulz step;
    phi_t is the flow of xi^2/2 + E_*(x).  egorov_error is NaN without ``f``.
    """
    from .dynamics import flow_function

    d = model.d_fast
    j = model.relevant[0]
    H = weyl_quantize(model.H0, grid, eps, check=False)
    Pi = weyl_quantize(bundle_symbol(model, lambda b: b.pi0.v + eps * b.pi1), grid, eps, check=False).matrix
    Pi = _newton_schulz(Pi)
    U0 = weyl_quantize(bundle_symbol(model, lambda b: b.u0.v), grid, eps, check=False).matrix
    Heff = weyl_quantize(bundle_symbol(model, lambda b: b.heff0 + eps * b.heff1), grid, eps, check=False).matrix
    Heff = QuantizedOperator(0.5 * (Heff + Heff.conj().T), eps, grid, d)
    Pref = np.kron(np.eye(grid.n_x), reference_projection(d, model.relevant))
    full = HamiltonianSpectrum.of(H).propagator(t).matrix
    eff = HamiltonianSpectrum.of(Heff).propagator(t).matrix
    unitary_error = operator_norm(full @ Pi - U0.conj().T @ eff @ Pref @ U0 @ Pi)
    leakage = operator_norm((np.eye(Pi.shape[0]) - Pi) @ full @ Pi)
    eg = float("nan")
    if f is not None:
        F = weyl_quantize(f, grid, eps, check=False).matrix
        if f.d_fast == 1 and d > 1:
            F = np.kron(F, np.eye(d))
        Fq = full.conj().T @ F @ full

        def f0(b):
            F0 = f.matrix(b.bands.x, b.bands.xi)
            phi = b.bands.phi[..., :, j]
            if F0.shape[-1] == 1:
                F0 = F0 * np.eye(d)
            return np.real(np.einsum("...a,...ab,...b->...", np.conj(phi), F0, phi))
        reach = grid.box_length + t * grid.nyquist * eps + 1.0
        h_band = band_hamiltonian(model, j, (-reach, reach))
        f0t = bundle_symbol(model, f0, d_fast=1).compose(flow_function(h_band, t, dt))
        Fc = np.kron(weyl_quantize(f0t, grid, eps, check=False).matrix, np.eye(d))
        Fc = U0.conj().T @ Pref @ Fc @ Pref @ U0
        eg = operator_norm(Pi @ (Fq - Fc) @ Pi)
    return EffectiveDynamicsReport(float(unitary_error), float(eg), float(leakage), float(eps), float(t))
