"""Weyl quantization on the periodic grid, Wigner transforms, dequantization.

Discretization
--------------
The Weyl operator has the kernel representation

    Op(f) phi (x) = (2 pi)^-1 int dy int dk e^{i k (x - y)} f((x+y)/2, eps k) phi(y).

On the grid the k-integral becomes a sum over the dual lattice kappa_m and
the y-integral a sum over x_k, giving

    M[j, k] = (1/N) sum_m exp(i kappa_m (x_j - x_k)) f(c_jk, eps kappa_m)

where the midpoint c_jk = x_k + delta dx / 2 uses the centred difference
delta = j - k in [-N/2, N/2).  Midpoints live on the half grid, so symbols are
evaluated at 2N positions.  At delta = -N/2 the two torus midpoints x_k +- L/4
are averaged, which keeps Op(conj f) = Op(f)^dagger exact.

With this choice Op(1) = Id, Op(V(x)) = diag(V(x_j)) and Op(g(xi)) is the
spectral Fourier multiplier g(eps kappa), all to rounding.

Dequantization inverts the map centre by centre: the entries sharing a
midpoint form an (N/2)-point DFT.  Even centres (on the grid) give
g(kappa_m) + g(kappa_{m+N/2}), odd centres (between grid points) give the
difference, which is moved back onto the grid with a spectral half-step shift.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .phasespace import (Lattice, PhaseField, PhaseSpaceGrid, Symbol, check_decay)

__all__ = [
    "QuantizedOperator",
    "WaveFunction",
    "WignerField",
    "weyl_quantize",
    "weyl_quantize_direct",
    "dequantize",
    "wigner_transform",
    "fourier_wigner",
    "symplectic_fourier",
    "symplectic_fourier_direct",
    "phase_space_expectation",
    "position_operator",
    "momentum_operator",
]


@dataclass(frozen=True)
class QuantizedOperator:
    """Dense matrix acting on grid wavefunctions, slow-major fast-minor layout."""

    matrix: np.ndarray
    eps: float
    grid: PhaseSpaceGrid
    d_fast: int = 1

    def __post_init__(self):
        n = self.grid.n_x * self.d_fast
        if self.matrix.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {self.matrix.shape}")

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.grid, self.eps)

    def _like(self, m):
        return QuantizedOperator(m, self.eps, self.grid, self.d_fast)

    def _check(self, other):
        if not (self.grid.same_as(other.grid) and self.d_fast == other.d_fast
                and abs(self.eps - other.eps) <= 1e-14 * self.eps):
            raise ValueError("operator provenance mismatch")

    def __matmul__(self, other):
        if isinstance(other, QuantizedOperator):
            self._check(other)
            return self._like(self.matrix @ other.matrix)
        if isinstance(other, WaveFunction):
            return WaveFunction(self.matrix @ other.values, other.grid, other.d_fast)
        return self.matrix @ other

    def __add__(self, other):
        self._check(other)
        return self._like(self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.matrix - other.matrix)

    def __mul__(self, c):
        return self._like(self.matrix * c)

    __rmul__ = __mul__

    @property
    def H(self):
        return self._like(self.matrix.conj().T)

    def hermiticity_defect(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m - m.conj().T)) / max(np.max(np.abs(m)), 1e-300))


@dataclass(frozen=True)
class WaveFunction:
    """Complex vector on the grid (times the fast index, fast-minor)."""

    values: np.ndarray
    grid: PhaseSpaceGrid
    d_fast: int = 1

    def __post_init__(self):
        if self.values.shape != (self.grid.n_x * self.d_fast,):
            raise ValueError("wavefunction length does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wavefunction has non-finite entries")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.dx))

    def normalized(self) -> "WaveFunction":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero wavefunction")
        return WaveFunction(self.values / n, self.grid, self.d_fast)

    def inner(self, other: "WaveFunction") -> complex:
        """<self, other> with the grid measure dx."""
        return complex(np.vdot(self.values, other.values) * self.grid.dx)

    def component(self, a: int) -> np.ndarray:
        return self.values.reshape(self.grid.n_x, self.d_fast)[:, a]


@dataclass(frozen=True)
class WignerField:
    """Samples of a Wigner-type transform on the lattice (alpha x_j, beta kappa_m)."""

    values: np.ndarray
    grid: PhaseSpaceGrid
    eps: float
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def x(self):
        return self.alpha * self.grid.x

    @property
    def xi(self):
        return self.beta * self.grid.kappa

    @property
    def cell(self) -> float:
        return self.alpha * self.grid.dx * self.beta * self.grid.dkappa


# --------------------------------------------------------------------------
# quantization
# --------------------------------------------------------------------------

def _centre_positions(grid: PhaseSpaceGrid) -> np.ndarray:
    return -0.5 * grid.box_length + 0.5 * grid.dx * np.arange(2 * grid.n_x)


def _kappa_fft(grid: PhaseSpaceGrid) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(grid.n_x, d=grid.dx)


def _index_maps(n: int):
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    delta = (j - k + n // 2) % n - n // 2
    centre = (2 * k + delta) % (2 * n)
    return delta, centre


def _half_shift(values: np.ndarray, grid: PhaseSpaceGrid, sign: int) -> np.ndarray:
    """Spectral shift by sign*dx/2 along axis 0: returns v(x + sign dx/2).

    The unpaired Nyquist mode is dropped (its half-step shift is ambiguous).
    """
    kap = _kappa_fft(grid)
    mult = np.exp(1j * sign * kap * grid.dx / 2)
    mult[grid.n_x // 2] = 0.0
    shape = (grid.n_x,) + (1,) * (values.ndim - 1)
    return np.fft.ifft(np.fft.fft(values, axis=0) * mult.reshape(shape), axis=0)


def _assemble(F: np.ndarray, grid: PhaseSpaceGrid) -> np.ndarray:
    """Matrix from symbol samples F[c, p, a, b] at centres c, FFT-ordered momenta p."""
    n = grid.n_x
    d = F.shape[-1]
    G = np.fft.ifft(F, axis=1)  # G[c, delta mod n] = (1/n) sum_p e^{2 pi i p delta / n} F[c, p]
    delta, centre = _index_maps(n)
    M = G[centre, delta % n]
    nyq = delta == -(n // 2)
    if np.any(nyq):
        alt = (centre + n) % (2 * n)
        M[nyq] = 0.5 * (M[nyq] + G[alt[nyq], (n // 2) % n])
    return M.transpose(0, 2, 1, 3).reshape(n * d, n * d)


def weyl_quantize(f, grid: Optional[PhaseSpaceGrid] = None, eps: Optional[float] = None,
                  check: bool = True) -> QuantizedOperator:
    """Op_eps(f) as a dense matrix on the grid.

    ``f`` is a :class:`Symbol` (evaluated at half-grid midpoints) or a
    :class:`PhaseField` (lattice samples, midpoints by spectral half-shift).
    Decaying symbols are checked for boundary decay unless ``check`` is False.
    """
    if isinstance(f, PhaseField):
        grid, eps = f.grid, f.eps
        lat = f.lattice
        vals = f.values
        if check:
            check_decay(None, lat, values=vals) if _decays_flag(f) else None
        fftord = np.fft.ifftshift(vals, axes=1)  # ascending m -> FFT order p
        odd = _half_shift(fftord, grid, +1)
        F = np.empty((2 * grid.n_x,) + fftord.shape[1:], dtype=complex)
        F[0::2] = fftord
        F[1::2] = odd
        return QuantizedOperator(_assemble(F, grid), float(eps), grid, f.d_fast)
    if grid is None or eps is None:
        raise ValueError("weyl_quantize needs a grid and eps for Symbol input")
    if not eps > 0:
        raise ValueError("eps must be positive")
    lat = Lattice(grid, float(eps))
    if check and f.decays:
        check_decay(f, lat)
    xc = _centre_positions(grid)[:, None]
    xi = (eps * _kappa_fft(grid))[None, :]
    F = f.matrix(xc, xi)
    if not np.all(np.isfinite(F)):
        raise FloatingPointError("symbol returned non-finite values")
    return QuantizedOperator(_assemble(F, grid), float(eps), grid, f.d_fast)


def _decays_flag(field: PhaseField) -> bool:
    return getattr(field, "decays", True)


def weyl_quantize_direct(f: Symbol, grid: PhaseSpaceGrid, eps: float) -> QuantizedOperator:
    """Reference quantization by explicit triple sums, no FFT.  For n_x <= 16."""
    n = grid.n_x
    if n > 16:
        raise ValueError("direct quantization is an oracle for n_x <= 16")
    d = f.d_fast
    M = np.zeros((n, d, n, d), dtype=complex)
    kap = grid.kappa
    L = grid.box_length
    for j in range(n):
        for k in range(n):
            delta = (j - k + n // 2) % n - n // 2
            # midpoints by integer half-grid index, so the seam x = +-L/2 maps to -L/2
            cs = [(2 * k + delta) % (2 * n)]
            if delta == -(n // 2):
                cs.append((2 * k + delta + n) % (2 * n))
            mids = [-L / 2 + c * grid.dx / 2 for c in cs]
            acc = 0
            for mid in mids:
                for km in kap:
                    acc = acc + np.exp(1j * km * delta * grid.dx) * f.matrix(np.array(mid), np.array(eps * km))
            M[j, :, k, :] = acc / (n * len(mids))
    return QuantizedOperator(M.reshape(n * d, n * d), float(eps), grid, d)


def dequantize(T: QuantizedOperator) -> PhaseField:
    """Weyl symbol of a grid operator, sampled on the lattice (x_j, eps kappa_m)."""
    grid = T.grid
    n = grid.n_x
    h = n // 2
    d = T.d_fast
    M4 = T.matrix.reshape(n, d, n, d).transpose(0, 2, 1, 3)
    deltas = np.arange(-h, h)
    out = {}
    for parity in (0, 1):
        dl = deltas[deltas % 2 == parity]
        s = (dl - parity) // 2 % h  # DFT index of each delta
        c = 2 * np.arange(n)[:, None] + parity  # centres
        k = ((c - dl[None, :]) // 2) % n
        j = (k + dl[None, :]) % n
        vals = np.zeros((n, h, d, d), dtype=complex)
        vals[:, s] = M4[j, k]
        spec = 2 * np.fft.fft(vals, axis=1)  # spec[:, p] for p in [0, h)
        if parity:
            p = np.arange(h)
            spec = spec * np.exp(-2j * np.pi * p / n)[None, :, None, None]
            spec = _half_shift(spec, grid, -1)
        out[parity] = spec
    E, O = out[0], out[1]
    F = np.empty((n, n, d, d), dtype=complex)
    F[:, :h] = 0.5 * (E + O)
    F[:, h:] = 0.5 * (E - O)
    return PhaseField(np.fft.fftshift(F, axes=1), Lattice(grid, T.eps))


# --------------------------------------------------------------------------
# Wigner transforms
# --------------------------------------------------------------------------

def _outer_operator(psi: WaveFunction, phi: WaveFunction, eps: float) -> QuantizedOperator:
    if not psi.grid.same_as(phi.grid) or psi.d_fast != phi.d_fast:
        raise ValueError("grid mismatch between wavefunctions")
    m = np.outer(psi.values, np.conj(phi.values)) * psi.grid.dx
    return QuantizedOperator(m, float(eps), psi.grid, psi.d_fast)


def wigner_transform(psi: WaveFunction, phi: WaveFunction, eps: float) -> WignerField:
    """W(psi, phi)(x, xi) = (2pi)^-1/2 int dy e^{-i y xi} phi*(x - eps y/2) psi(x + eps y/2).

    Computed as the dequantization of |psi><phi| divided by eps sqrt(2pi);
    off-grid shifts are handled spectrally (periodic box).  With fast indices
    the field carries a (d, d) block, W_ab built from psi_a and phi_b.
    """
    sym = dequantize(_outer_operator(psi, phi, eps))
    v = sym.values / (eps * np.sqrt(2 * np.pi))
    if psi.d_fast == 1:
        v = v[..., 0, 0]
    return WignerField(v, psi.grid, float(eps), 1.0, float(eps))


def _spectral_translate(v: np.ndarray, grid: PhaseSpaceGrid, shifts: np.ndarray) -> np.ndarray:
    """Rows r of the result hold v(x + shifts[r]) (periodic, band-limited)."""
    kap = _kappa_fft(grid)
    spec = np.fft.fft(v)
    ph = np.exp(1j * np.outer(shifts, kap))
    ph[:, grid.n_x // 2] = np.cos(shifts * kap[grid.n_x // 2])
    return np.fft.ifft(spec[None, :] * ph, axis=1)


def fourier_wigner(psi: WaveFunction, phi: WaveFunction, eps: float) -> WignerField:
    """rho(psi, phi)(x, xi) = (2pi)^-1/2 int dy e^{-i y xi} phi*(y - eps x/2) psi(y + eps x/2).

    Sampled on the lattice (x_j / eps, kappa_m), the symplectic-Fourier dual of
    the Wigner lattice.  Scalar wavefunctions only.
    """
    if not psi.grid.same_as(phi.grid):
        raise ValueError("grid mismatch between wavefunctions")
    if psi.d_fast != 1 or phi.d_fast != 1:
        raise ValueError("fourier_wigner takes scalar wavefunctions")
    grid = psi.grid
    half = grid.x / 2  # eps * (x_j / eps) / 2
    P = _spectral_translate(psi.values, grid, half)
    Q = _spectral_translate(phi.values, grid, -half)
    prod = np.conj(Q) * P  # [row j, y_k]
    kap = grid.kappa
    y = grid.x
    E = np.exp(-1j * np.outer(y, kap))  # [k, m]
    v = prod @ E * grid.dx / np.sqrt(2 * np.pi)
    return WignerField(v, grid, float(eps), 1.0 / eps, 1.0)


def _dual(field: WignerField):
    return 1.0 / field.beta, 1.0 / field.alpha


def symplectic_fourier(field: WignerField) -> WignerField:
    """(F_sigma f)(X) = (2pi)^-1 int e^{i sigma(X, Y)} f(Y) dY on the dual lattice.

    A lattice (alpha x_j, beta kappa_m) maps to (x_j / beta, kappa_m / alpha),
    so the phases reduce to exp(i kappa_m x_k) on every lattice.  One DFT per
    axis; applying the transform twice returns the input.
    """
    grid = field.grid
    n = grid.n_x
    f = np.asarray(field.values)
    if f.shape[:2] != (n, n):
        raise ValueError("lattice mismatch")
    w = field.alpha * field.beta / n
    A = np.exp(1j * np.outer(grid.kappa, grid.x))  # A[m, k] = e^{i kappa_m x_k}
    # out[j, m] = w sum_{k, q} A[m, k] f[k, q] conj(A[q, j])
    out = w * np.einsum("mk,kq...,qj->jm...", A, f, np.conj(A), optimize=True)
    a, b = _dual(field)
    return WignerField(out, grid, field.eps, a, b)


def symplectic_fourier_direct(field: WignerField) -> WignerField:
    """Same transform by explicit double sums; an oracle for small lattices."""
    grid = field.grid
    n = grid.n_x
    y = field.x
    eta = field.xi
    a, b = _dual(field)
    X = a * grid.x
    XI = b * grid.kappa
    f = np.asarray(field.values)
    out = np.zeros_like(f, dtype=complex)
    cell = field.cell
    for j in range(n):
        for m in range(n):
            ph = np.exp(1j * (XI[m] * y[:, None] - X[j] * eta[None, :]))
            out[j, m] = np.sum(ph * f) * cell / (2 * np.pi)
    return WignerField(out, grid, field.eps, a, b)


def phase_space_expectation(f: Symbol, psi: WaveFunction, eps: float) -> complex:
    """(2pi)^-1/2 sum f(x_j, xi_m) W(psi, psi)(x_j, xi_m) dx dxi."""
    if f.d_fast != 1 or psi.d_fast != 1:
        raise ValueError("phase_space_expectation needs a scalar symbol")
    W = wigner_transform(psi, psi, eps)
    X, XI = Lattice(psi.grid, eps).mesh()
    fv = np.asarray(f(X, XI))
    dxi = eps * psi.grid.dkappa
    return complex(np.sum(fv * W.values) * psi.grid.dx * dxi / np.sqrt(2 * np.pi))


def position_operator(grid: PhaseSpaceGrid, eps: float, d_fast: int = 1) -> QuantizedOperator:
    m = np.kron(np.diag(grid.x), np.eye(d_fast))
    return QuantizedOperator(m.astype(complex), float(eps), grid, d_fast)


def momentum_operator(grid: PhaseSpaceGrid, eps: float, d_fast: int = 1) -> QuantizedOperator:
    """-i eps d/dx as the spectral multiplier eps*kappa (Nyquist mode included)."""
    n = grid.n_x
    F = np.fft.fft(np.eye(n), axis=0)
    kap = _kappa_fft(grid)
    m = np.fft.ifft(eps * kap[:, None] * F, axis=0)
    return QuantizedOperator(np.kron(m, np.eye(d_fast)), float(eps), grid, d_fast)
