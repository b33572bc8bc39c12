"""Phase-space grids, symbols, the symplectic form and Poisson brackets.

Everything here is shared by the other modules.  A *grid* fixes a periodic
position box ``[-L/2, L/2)`` with ``n_x`` points and its dual momentum lattice
``kappa_m = 2 pi m / L``.  Together with the semiclassical parameter ``eps`` it
defines the phase-space *lattice* ``(x_j, eps * kappa_m)`` on which symbols are
sampled.

Symbols are callables ``f(x, xi)`` that broadcast over numpy arrays.  Scalar
symbols return arrays of the broadcast shape, matrix symbols return an extra
trailing ``(d, d)`` block.  Derivatives come from one of three backends:
an analytic closure, a spectral (FFT) multiplier on lattice samples, or
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PhaseSpaceGrid",
    "make_grid",
    "symplectic_form",
    "Symbol",
    "PhaseField",
    "Lattice",
    "differentiate",
    "poisson_bracket",
    "check_decay",
    "gaussian_symbol",
    "polynomial_symbol",
    "constant_symbol",
    "matrix_symbol",
    "BoundaryDecayError",
    "AliasingError",
    "SpectralBackendError",
]

DECAY_TOL = 1e-8
WRAP_TOL = 1e-6


class BoundaryDecayError(ValueError):
    """Symbol is not small at the edge of the position box."""


class AliasingError(ValueError):
    """Symbol is not small at the edge of the momentum lattice (eps too small)."""


class SpectralBackendError(ValueError):
    """Spectral differentiation requested for data that is not periodic."""


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Periodic position box with its dual momentum lattice.

    ``x`` and ``kappa`` are 1-d arrays shared by every slow dimension.  The
    momentum lattice is in ascending order, ``kappa[0] = -pi/dx`` is the
    single unpaired Nyquist point.
    """

    n_x: int
    box_length: float
    d_slow: int = 1

    def __post_init__(self):
        if not isinstance(self.n_x, (int, np.integer)) or self.n_x < 8 or self.n_x % 2:
            raise ValueError(f"n_x must be an even integer >= 8, got {self.n_x!r}")
        if not np.isfinite(self.box_length) or self.box_length <= 0:
            raise ValueError(f"box_length must be positive, got {self.box_length!r}")
        if self.d_slow not in (1, 2):
            raise ValueError(f"unsupported dimension d_slow={self.d_slow!r} (1 or 2)")

    @property
    def dx(self) -> float:
        return self.box_length / self.n_x

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.box_length + self.dx * np.arange(self.n_x)

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.n_x // 2, self.n_x // 2)

    @property
    def kappa(self) -> np.ndarray:
        return (2 * np.pi / self.box_length) * self.m

    @property
    def dkappa(self) -> float:
        return 2 * np.pi / self.box_length

    @property
    def nyquist(self) -> float:
        return np.pi / self.dx

    def xi(self, eps: float) -> np.ndarray:
        """Symbol momenta ``eps * kappa`` for the semiclassical scale ``eps``."""
        return eps * self.kappa

    def lattice(self, eps: float) -> "Lattice":
        return Lattice(self, float(eps))

    def same_as(self, other: "PhaseSpaceGrid") -> bool:
        return (self.n_x == other.n_x and self.d_slow == other.d_slow
                and abs(self.box_length - other.box_length) <= 1e-14 * self.box_length)


def make_grid(n_x: int, box_length: float, d_slow: int = 1) -> PhaseSpaceGrid:
    """Build a :class:`PhaseSpaceGrid`, validating the parameters."""
    return PhaseSpaceGrid(int(n_x) if float(n_x).is_integer() else n_x, float(box_length), int(d_slow))


@dataclass(frozen=True)
class Lattice:
    """The sampling lattice ``(x_j, eps*kappa_m)`` of a grid at scale eps."""

    grid: PhaseSpaceGrid
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps!r}")

    @property
    def x(self):
        return self.grid.x

    @property
    def xi(self):
        return self.grid.xi(self.eps)

    @property
    def dxi(self):
        return self.eps * self.grid.dkappa

    def mesh(self):
        return np.meshgrid(self.x, self.xi, indexing="ij")

    def compatible(self, other: "Lattice") -> bool:
        return self.grid.same_as(other.grid) and abs(self.eps - other.eps) <= 1e-14 * self.eps


# --------------------------------------------------------------------------
# symplectic form
# --------------------------------------------------------------------------

def symplectic_form(X, Y) -> np.ndarray:
    """sigma(X, Y) = xi . y - x . eta for X = (x, xi), Y = (y, eta).

    Points are arrays whose last axis has even length 2d, positions first.
    Leading axes broadcast.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-1] != Y.shape[-1]:
        raise ValueError(f"dimension mismatch: {X.shape[-1]} vs {Y.shape[-1]}")
    if X.shape[-1] % 2:
        raise ValueError("phase-space points need an even number of coordinates")
    d = X.shape[-1] // 2
    x, xi = X[..., :d], X[..., d:]
    y, eta = Y[..., :d], Y[..., d:]
    return np.sum(xi * y, axis=-1) - np.sum(x * eta, axis=-1)


# --------------------------------------------------------------------------
# finite differences and spectral multipliers
# --------------------------------------------------------------------------

def _fd_partial(func, x, xi, a: int, b: int, h: float):
    """Nested central differences d^a/dx^a d^b/dxi^b with O(h^2) error."""
    out = 0.0
    for i in range(a + 1):
        cx = (-1) ** i * comb(a, i)
        sx = (a / 2 - i) * h
        for k in range(b + 1):
            ck = (-1) ** k * comb(b, k)
            sk = (b / 2 - k) * h
            out = out + cx * ck * func(x + sx, xi + sk)
    return out / h ** (a + b)


def _spectral_axis(values: np.ndarray, axis: int, spacing: float, order: int) -> np.ndarray:
    """order-th derivative along ``axis`` of periodic samples with given spacing."""
    n = values.shape[axis]
    freq = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
    mult = (1j * freq) ** order
    if order % 2 == 1:
        mult[n // 2] = 0.0  # the unpaired Nyquist mode has no odd derivative
    shape = [1] * values.ndim
    shape[axis] = n
    spec = np.fft.fft(values, axis=axis) * mult.reshape(shape)
    return np.fft.ifft(spec, axis=axis)


def _wrap_mismatch(values: np.ndarray, axis: int) -> float:
    """Size of the upper half of the spectrum along ``axis``.

    Smooth periodic data has a negligible high-frequency tail, a seam (jump in
    value or slope at the box wrap) spreads like 1/k into it.
    """
    n = values.shape[axis]
    spec = np.fft.fft(values, axis=axis) / n
    k = np.abs(np.fft.fftfreq(n) * n)
    sel = np.take(spec, np.nonzero(k > n // 4)[0], axis=axis)
    return float(np.max(np.abs(sel))) if sel.size else 0.0


# --------------------------------------------------------------------------
# symbols
# --------------------------------------------------------------------------

Func = Callable[[np.ndarray, np.ndarray], np.ndarray]
Deriv = Callable[[np.ndarray, np.ndarray, int, int], np.ndarray]


class Symbol:
    """A function on phase space, scalar (d_fast = 1) or d_fast x d_fast.

    Parameters
    ----------
    func : callable(x, xi)
        Broadcasting evaluator.  Scalar symbols return the broadcast shape,
        matrix symbols append ``(d_fast, d_fast)``.
    derivative : callable(x, xi, a, b), optional
        Analytic partial derivative d_x^a d_xi^b.
    backend : {"analytic", "spectral", "fd"}
        Defaults to analytic when ``derivative`` is given, else spectral.
    fd_step : float
        Step for the finite-difference backend.
    hermitian : bool
        Values are hermitian matrices (real for scalars).
    decays : bool
        Whether the symbol is expected to vanish at the lattice boundary.
        Hamiltonians and polynomial observables set this to False.
    """

    def __init__(self, func: Func, d_fast: int = 1, derivative: Optional[Deriv] = None,
                 backend: Optional[str] = None, fd_step: float = 1e-3,
                 hermitian: bool = False, decays: bool = True, name: str = ""):
        if d_fast < 1:
            raise ValueError("d_fast must be positive")
        if backend is None:
            backend = "analytic" if derivative is not None else "spectral"
        if backend not in ("analytic", "spectral", "fd"):
            raise ValueError(f"unknown derivative backend {backend!r}")
        if backend == "analytic" and derivative is None:
            raise ValueError("analytic backend needs a derivative closure")
        self.func = func
        self.d_fast = int(d_fast)
        self.derivative = derivative
        self.backend = backend
        self.fd_step = float(fd_step)
        self.hermitian = hermitian
        self.decays = decays
        self.name = name

    def __repr__(self):
        return f"Symbol({self.name or '?'}, d_fast={self.d_fast}, backend={self.backend})"

    # evaluation -----------------------------------------------------------
    def __call__(self, x, xi):
        return self.func(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))

    def matrix(self, x, xi) -> np.ndarray:
        """Values with an explicit trailing (d, d) block, complex dtype."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        v = np.asarray(self.func(x, xi), dtype=complex)
        if self.d_fast == 1:
            v = np.broadcast_to(v, shape)[..., None, None]
        else:
            v = np.broadcast_to(v, shape + (self.d_fast, self.d_fast))
        return v

    def sample(self, lattice: Lattice) -> "PhaseField":
        X, XI = lattice.mesh()
        return PhaseField(self.matrix(X, XI), lattice)

    # derivatives -----------------------------------------------------------
    def partial(self, a: int, b: int) -> "Symbol":
        """d_x^a d_xi^b as a new Symbol (analytic or finite-difference)."""
        if a < 0 or b < 0:
            raise ValueError("derivative orders must be non-negative")
        if a == 0 and b == 0:
            return self
        if self.backend == "analytic":
            d = self.derivative
            return Symbol(lambda x, xi: d(x, xi, a, b), self.d_fast,
                          derivative=lambda x, xi, p, q: d(x, xi, a + p, b + q),
                          decays=self.decays, name=f"d{a},{b}{self.name}")
        if self.backend == "spectral":
            raise SpectralBackendError(
                "spectral derivatives need lattice samples; use differentiate(..., lattice=...)")
        f, h = self.func, self.fd_step
        return Symbol(lambda x, xi: _fd_partial(f, x, xi, a, b, h), self.d_fast,
                      backend="fd", fd_step=h, decays=self.decays, name=f"d{a},{b}{self.name}")

    # algebra ----------------------------------------------------------------
    def _binary(self, other, op, name):
        if isinstance(other, Symbol):
            if other.d_fast != self.d_fast and 1 not in (self.d_fast, other.d_fast):
                raise ValueError("shape mismatch between symbols")
            d = max(self.d_fast, other.d_fast)
            f, g = self, other
            both = f.backend == "analytic" and g.backend == "analytic"
            deriv = None
            if both and op in ("add", "sub"):
                s = 1.0 if op == "add" else -1.0
                deriv = lambda x, xi, a, b: _lift(f.derivative(x, xi, a, b), f.d_fast, d) + \
                    s * _lift(g.derivative(x, xi, a, b), g.d_fast, d)
            sgn = 1.0 if op == "add" else -1.0
            if op in ("add", "sub"):
                fn = lambda x, xi: _lift(f(x, xi), f.d_fast, d) + sgn * _lift(g(x, xi), g.d_fast, d)
            else:
                raise ValueError(op)
            backend = "analytic" if deriv else ("fd" if "fd" in (f.backend, g.backend) else
                                                ("spectral" if "spectral" in (f.backend, g.backend) else "fd"))
            return Symbol(fn, d, derivative=deriv, backend=backend, fd_step=min(f.fd_step, g.fd_step),
                          hermitian=f.hermitian and g.hermitian, decays=f.decays and g.decays, name=name)
        c = other
        f = self
        if op == "add":
            return Symbol(lambda x, xi: f(x, xi) + c * _eye_like(f.d_fast), f.d_fast,
                          derivative=(lambda x, xi, a, b: f.derivative(x, xi, a, b)) if f.derivative else None,
                          backend=f.backend, fd_step=f.fd_step, decays=False, name=name)
        raise TypeError("unsupported operand")

    def __add__(self, other):
        return self._binary(other, "add", f"({self.name}+)")

    def __sub__(self, other):
        return self._binary(other, "sub", f"({self.name}-)")

    def scale(self, c: complex) -> "Symbol":
        f = self
        deriv = (lambda x, xi, a, b: c * f.derivative(x, xi, a, b)) if f.derivative else None
        return Symbol(lambda x, xi: c * f(x, xi), f.d_fast, derivative=deriv, backend=f.backend,
                      fd_step=f.fd_step, hermitian=f.hermitian and np.isreal(c), decays=f.decays,
                      name=f"{c}*{f.name}")

    def __mul__(self, c):
        if isinstance(c, Symbol):
            return pointwise_product(self, c)
        return self.scale(c)

    __rmul__ = scale

    def conj(self) -> "Symbol":
        """Pointwise complex conjugate (conjugate transpose for matrices)."""
        f = self
        if f.d_fast == 1:
            fn = lambda x, xi: np.conj(f(x, xi))
            deriv = (lambda x, xi, a, b: np.conj(f.derivative(x, xi, a, b))) if f.derivative else None
        else:
            fn = lambda x, xi: np.conj(np.swapaxes(f(x, xi), -1, -2))
            deriv = (lambda x, xi, a, b: np.conj(np.swapaxes(f.derivative(x, xi, a, b), -1, -2))) \
                if f.derivative else None
        return Symbol(fn, f.d_fast, derivative=deriv, backend=f.backend, fd_step=f.fd_step,
                      hermitian=f.hermitian, decays=f.decays, name=f"{f.name}*")

    def compose(self, flow: Callable[[np.ndarray, np.ndarray], tuple], name: str = "") -> "Symbol":
        """f o phi for a phase-space map phi(x, xi) -> (x', xi')."""
        f = self

        def fn(x, xi):
            x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
            y, eta = flow(x, xi)
            return f(y, eta)
        return Symbol(fn, f.d_fast, backend="fd", fd_step=f.fd_step, hermitian=f.hermitian,
                      decays=f.decays, name=name or f"{f.name}o phi")


def _eye_like(d):
    return 1.0 if d == 1 else np.eye(d)


def _lift(v, d_from, d_to):
    v = np.asarray(v)
    if d_from == d_to:
        return v
    return v[..., None, None] * np.eye(d_to)


def pointwise_product(f: Symbol, g: Symbol) -> Symbol:
    """(f g)(X) = f(X) g(X), matrix product for matrix symbols (Leibniz derivatives)."""
    d = max(f.d_fast, g.d_fast)

    def mul(u, v, du, dv):
        u, v = _lift(u, du, d), _lift(v, dv, d)
        return u @ v if d > 1 else u * v

    fn = lambda x, xi: mul(f(x, xi), g(x, xi), f.d_fast, g.d_fast)
    deriv = None
    if f.backend == "analytic" and g.backend == "analytic":
        def deriv(x, xi, a, b):
            out = 0
            for i in range(a + 1):
                for k in range(b + 1):
                    c = comb(a, i) * comb(b, k)
                    fu = f(x, xi) if (i == 0 and k == 0) else f.derivative(x, xi, i, k)
                    gv = g(x, xi) if (a - i == 0 and b - k == 0) else g.derivative(x, xi, a - i, b - k)
                    out = out + c * mul(fu, gv, f.d_fast, g.d_fast)
            return out
    backend = "analytic" if deriv else "fd"
    return Symbol(fn, d, derivative=deriv, backend=backend, fd_step=min(f.fd_step, g.fd_step),
                  decays=f.decays or g.decays, name=f"{f.name}{g.name}")


class PhaseField:
    """Samples of a symbol on a lattice, shape (n_x, n_x, d, d).

    Axis 0 runs over positions x_j, axis 1 over momenta eps*kappa_m
    (ascending).  Derivatives are spectral.
    """

    def __init__(self, values: np.ndarray, lattice: Lattice):
        values = np.asarray(values)
        n = lattice.grid.n_x
        if values.ndim == 2:
            values = values[..., None, None]
        if values.shape[:2] != (n, n) or values.ndim != 4 or values.shape[2] != values.shape[3]:
            raise ValueError(f"lattice mismatch: samples of shape {values.shape} on n_x={n}")
        self.values = values
        self.lattice = lattice

    @property
    def d_fast(self):
        return self.values.shape[-1]

    @property
    def grid(self):
        return self.lattice.grid

    @property
    def eps(self):
        return self.lattice.eps

    @property
    def scalar(self) -> np.ndarray:
        if self.d_fast != 1:
            raise ValueError("field is matrix valued")
        return self.values[..., 0, 0]

    def _check(self, other: "PhaseField"):
        if not self.lattice.compatible(other.lattice):
            raise ValueError("lattice mismatch")

    def __add__(self, other):
        if isinstance(other, PhaseField):
            self._check(other)
            return PhaseField(self.values + other.values, self.lattice)
        return PhaseField(self.values + other * np.eye(self.d_fast), self.lattice)

    def __sub__(self, other):
        if isinstance(other, PhaseField):
            self._check(other)
            return PhaseField(self.values - other.values, self.lattice)
        return PhaseField(self.values - other * np.eye(self.d_fast), self.lattice)

    def __mul__(self, c):
        if isinstance(c, PhaseField):
            self._check(c)
            return PhaseField(self.values @ c.values, self.lattice)
        return PhaseField(self.values * c, self.lattice)

    __rmul__ = __mul__

    def __neg__(self):
        return PhaseField(-self.values, self.lattice)

    def conj(self):
        return PhaseField(np.conj(np.swapaxes(self.values, -1, -2)), self.lattice)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def partial(self, a: int, b: int) -> "PhaseField":
        v = self.values
        scale = max(self.max_abs(), 1e-300)
        if a:
            if _wrap_mismatch(v, 0) > WRAP_TOL * scale:
                raise SpectralBackendError("samples are not periodic in x (wrap mismatch)")
            v = _spectral_axis(v, 0, self.grid.dx, a)
        if b:
            if _wrap_mismatch(self.values, 1) > WRAP_TOL * scale:
                raise SpectralBackendError("samples are not periodic in xi (wrap mismatch)")
            v = _spectral_axis(v, 1, self.lattice.dxi, b)
        return PhaseField(v, self.lattice)


# --------------------------------------------------------------------------
# derivative front end, Poisson bracket
# --------------------------------------------------------------------------

def differentiate(f, variable: str, order: int = 1, backend: Optional[str] = None,
                  lattice: Optional[Lattice] = None, h: Optional[float] = None):
    """Partial derivative of ``f`` with respect to ``variable`` ('x' or 'xi').

    ``f`` may be a :class:`Symbol` or a :class:`PhaseField`.  ``backend``
    overrides the symbol's own.  The spectral backend returns a PhaseField on
    ``lattice``; the other backends return a Symbol.
    """
    if variable not in ("x", "xi"):
        raise ValueError("variable must be 'x' or 'xi'")
    if order < 1:
        raise ValueError("order must be >= 1")
    a, b = (order, 0) if variable == "x" else (0, order)
    if isinstance(f, PhaseField):
        return f.partial(a, b)
    backend = backend or f.backend
    if backend == "spectral":
        if lattice is None:
            raise SpectralBackendError("spectral backend needs a lattice")
        return f.sample(lattice).partial(a, b)
    if backend == "fd":
        step = f.fd_step if h is None else h
        g = Symbol(f.func, f.d_fast, backend="fd", fd_step=step, decays=f.decays, name=f.name)
        return g.partial(a, b)
    return f.partial(a, b)


def _partials(f, a: int, b: int, where):
    """Matrix-form samples of d_x^a d_xi^b f at ``where``.

    ``where`` is either a Lattice or a tuple of point arrays (x, xi).
    """
    if isinstance(f, PhaseField):
        if not isinstance(where, Lattice) or not f.lattice.compatible(where):
            raise ValueError("PhaseField can only be differentiated on its own lattice")
        return f.partial(a, b).values
    if isinstance(where, Lattice):
        if f.backend == "spectral":
            return f.sample(where).partial(a, b).values
        X, XI = where.mesh()
        return f.partial(a, b).matrix(X, XI)
    x, xi = where
    return f.partial(a, b).matrix(x, xi)


def _dfast(f):
    return f.d_fast


def poisson_bracket(f, g, at=None):
    """{f, g} = sum_l (d_xi f d_x g - d_x f d_xi g), matrix order as written.

    Without ``at`` the result is a Symbol closure (needs analytic or FD
    derivatives).  With ``at`` (Lattice or point tuple) the sampled values are
    returned: a PhaseField for a Lattice, a matrix-form array for points.
    """
    if _dfast(f) != _dfast(g) and 1 not in (_dfast(f), _dfast(g)):
        raise ValueError("shape mismatch between symbols")
    if at is None:
        if isinstance(f, PhaseField) or isinstance(g, PhaseField):
            raise ValueError("PhaseField inputs need at=lattice")
        d = max(f.d_fast, g.d_fast)

        def fn(x, xi):
            x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
            v = _bracket_values(f, g, (x, xi))
            if not np.all(np.isfinite(v)):
                raise FloatingPointError("derivative backend returned non-finite values")
            return v[..., 0, 0] if d == 1 else v
        return Symbol(fn, d, backend="fd", fd_step=min(f.fd_step, g.fd_step), name=f"{{{f.name},{g.name}}}")
    v = _bracket_values(f, g, at)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("derivative backend returned non-finite values")
    return PhaseField(v, at) if isinstance(at, Lattice) else v


def _bracket_values(f, g, where):
    fxi = _partials(f, 0, 1, where)
    fx = _partials(f, 1, 0, where)
    gx = _partials(g, 1, 0, where)
    gxi = _partials(g, 0, 1, where)
    return fxi @ gx - fx @ gxi


# --------------------------------------------------------------------------
# boundary decay
# --------------------------------------------------------------------------

def check_decay(f, lattice: Lattice, tol: float = DECAY_TOL, values: Optional[np.ndarray] = None):
    """Raise if a decaying symbol is not small on the lattice boundary.

    The position edge is the wrap point x = -L/2 (and its neighbour), the
    momentum edge the first and last lattice momenta.  A large momentum edge
    means eps is too small for the grid: the kernel's (y - x)/eps would leave
    the representable range.
    """
    if values is None:
        X, XI = lattice.mesh()
        values = f.matrix(X, XI)
    mag = np.abs(values).reshape(values.shape[0], values.shape[1], -1).max(axis=-1)
    top = float(mag.max())
    if top == 0:
        return
    x_edge = max(float(mag[0].max()), float(mag[-1].max()))
    xi_edge = max(float(mag[:, 0].max()), float(mag[:, -1].max()))
    if x_edge > tol * top:
        raise BoundaryDecayError(
            f"symbol does not decay at the position boundary: {x_edge:.3e} > {tol:g} * {top:.3e}")
    if xi_edge > tol * top:
        raise AliasingError(
            f"symbol is not small at the momentum edge |xi| = {abs(lattice.xi[0]):.4g}: "
            f"{xi_edge:.3e} > {tol:g} * {top:.3e}; eps={lattice.eps:g} is too small for this grid")


# --------------------------------------------------------------------------
# stock symbols with analytic derivatives
# --------------------------------------------------------------------------

def _hermite_deriv(u: np.ndarray, n: int) -> np.ndarray:
    """d^n/du^n exp(-u^2/2) / exp(-u^2/2) = (-1)^n He_n(u)."""
    h0, h1 = np.ones_like(u), u
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, u * h1 - k * h0
    return (-1) ** n * h1


def gaussian_symbol(x0: float = 0.0, xi0: float = 0.0, sx: float = 1.0, sxi: float = 1.0,
                    amp: complex = 1.0, name: str = "gauss") -> Symbol:
    """amp * exp(-(x-x0)^2/(2 sx^2) - (xi-xi0)^2/(2 sxi^2)) with exact derivatives."""
    def fn(x, xi):
        return amp * np.exp(-0.5 * ((x - x0) / sx) ** 2 - 0.5 * ((xi - xi0) / sxi) ** 2)

    def deriv(x, xi, a, b):
        u = (x - x0) / sx
        v = (xi - xi0) / sxi
        return fn(x, xi) * _hermite_deriv(u, a) * _hermite_deriv(v, b) / (sx ** a * sxi ** b)
    return Symbol(fn, 1, derivative=deriv, hermitian=np.isreal(amp), name=name)


def polynomial_symbol(coeffs: dict, name: str = "poly") -> Symbol:
    """Scalar polynomial sum c_{pq} x^p xi^q from {(p, q): c}."""
    coeffs = {tuple(k): v for k, v in coeffs.items()}
    dtype = complex if any(np.iscomplex(c) for c in coeffs.values()) else float

    def power(x, e):
        # repeated products: float ** int goes through pow() and is much slower
        out = 1.0
        for _ in range(e):
            out = out * x
        return out

    def deriv(x, xi, a, b):
        x, xi = np.asarray(x, float), np.asarray(xi, float)
        out = np.zeros(np.broadcast_shapes(x.shape, xi.shape), dtype=dtype)
        for (p, q), c in coeffs.items():
            if a > p or b > q:
                continue
            k = c * factorial(p) / factorial(p - a) * factorial(q) / factorial(q - b)
            out = out + k * (power(x, p - a) * power(xi, q - b))
        return out

    fn = lambda x, xi: deriv(x, xi, 0, 0)
    return Symbol(fn, 1, derivative=deriv, hermitian=all(np.isreal(c) for c in coeffs.values()),
                  decays=False, name=name)


def constant_symbol(c=1.0, d_fast: int = 1) -> Symbol:
    if d_fast == 1:
        fn = lambda x, xi: np.full(np.broadcast_shapes(np.shape(x), np.shape(xi)), c, dtype=complex)
        deriv = lambda x, xi, a, b: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(xi)))
    else:
        C = np.asarray(c) * np.ones((d_fast, d_fast)) if np.ndim(c) == 0 else np.asarray(c)
        fn = lambda x, xi: np.broadcast_to(C, np.broadcast_shapes(np.shape(x), np.shape(xi)) + C.shape)
        deriv = lambda x, xi, a, b: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(xi)) + C.shape)
    return Symbol(fn, d_fast, derivative=deriv, decays=False, name=f"const{c}")


def matrix_symbol(terms, name: str = "mat") -> Symbol:
    """sum_k s_k(x, xi) M_k for scalar Symbols s_k and constant matrices M_k.

    Derivatives are analytic when every scalar factor is analytic.
    """
    terms = [(s, np.asarray(M, dtype=complex)) for s, M in terms]
    d = terms[0][1].shape[0]

    def fn(x, xi):
        return sum(np.asarray(s(x, xi))[..., None, None] * M for s, M in terms)

    deriv = None
    if all(s.backend == "analytic" for s, _ in terms):
        def deriv(x, xi, a, b):
            return sum(np.asarray(s.derivative(x, xi, a, b))[..., None, None] * M for s, M in terms)
    herm = all(s.hermitian and np.allclose(M, M.conj().T) for s, M in terms)
    return Symbol(fn, d, derivative=deriv, backend="analytic" if deriv else "fd",
                  hermitian=herm, decays=all(s.decays for s, _ in terms), name=name)
