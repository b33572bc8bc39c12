"""Weyl (Moyal) products of symbols.

The exact product goes through the operator route: quantize both factors,
multiply the matrices and read the symbol back off.  The truncated product
sums the terms of the semiclassical expansion

    (f # g)_(n) = 1/n! (i/2)^n sum_k C(n,k) (-1)^(n-k)
                  (d_x^k d_xi^(n-k) f) (d_x^(n-k) d_xi^k g)

with f-derivatives on the left for matrix-valued symbols.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial
from typing import List, Optional, Union

import numpy as np

from .phasespace import Lattice, PhaseField, PhaseSpaceGrid, Symbol, _partials
from .quantize import dequantize, weyl_quantize

__all__ = [
    "MAX_ORDER",
    "MoyalExpansion",
    "moyal_term",
    "moyal_truncated",
    "moyal_expansion",
    "moyal_exact",
    "moyal_commutator",
]

MAX_ORDER = 4

SymbolLike = Union[Symbol, PhaseField]


def _d(f) -> int:
    return f.d_fast


def _term_values(f: SymbolLike, g: SymbolLike, n: int, where) -> np.ndarray:
    """Matrix-form samples of (f # g)_(n) at a Lattice or a point tuple."""
    pref = (0.5j) ** n / factorial(n)
    out = 0
    for k in range(n + 1):
        c = pref * comb(n, k) * (-1) ** (n - k)
        fv = _partials(f, k, n - k, where)
        gv = _partials(g, n - k, k, where)
        out = out + c * (fv @ gv)
    return np.asarray(out, dtype=complex)


def _check_order(n: int, max_order: int):
    if n < 0:
        raise ValueError("order must be non-negative")
    if n > max_order:
        raise ValueError(f"derivative order {n} exceeds the cap {max_order}")


def _as_result(v: np.ndarray, where):
    return PhaseField(v, where) if isinstance(where, Lattice) else v


def moyal_term(f: SymbolLike, g: SymbolLike, n: int, at=None, max_order: int = MAX_ORDER):
    """n-th term of the expansion of f # g.

    With ``at=None`` a Symbol closure is returned (requires analytic or FD
    derivatives).  With a Lattice the term is sampled into a PhaseField; with a
    point tuple ``(x, xi)`` a matrix-form array comes back.
    """
    _check_order(n, max_order)
    if _d(f) != _d(g) and 1 not in (_d(f), _d(g)):
        raise ValueError("shape mismatch between symbols")
    d = max(_d(f), _d(g))
    if at is not None:
        v = _term_values(f, g, n, at)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite derivative values")
        return _as_result(v, at)
    if isinstance(f, PhaseField) or isinstance(g, PhaseField):
        raise ValueError("PhaseField inputs need at=lattice")

    def fn(x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        v = _term_values(f, g, n, (x, xi))
        return v[..., 0, 0] if d == 1 else v
    return Symbol(fn, d, backend="fd", fd_step=min(f.fd_step, g.fd_step), decays=f.decays or g.decays,
                  name=f"({f.name}#{g.name})_{n}")


@dataclass(frozen=True)
class MoyalExpansion:
    """Sampled terms (f#g)_(0..N) on a lattice."""
    terms: List[PhaseField]
    order: int
    eps: float

    def __post_init__(self):
        if len(self.terms) != self.order + 1:
            raise ValueError("need one term per order")
        for t in self.terms:
            if not np.all(np.isfinite(t.values)):
                raise FloatingPointError("non-finite expansion term")

    def total(self, N: Optional[int] = None) -> PhaseField:
        N = self.order if N is None else N
        out = self.terms[0]
        for n in range(1, N + 1):
            out = out + self.terms[n] * self.eps ** n
        return out

    @property
    def lattice(self) -> Lattice:
        return self.terms[0].lattice


def moyal_expansion(f: SymbolLike, g: SymbolLike, N: int, lattice: Lattice,
                    max_order: int = MAX_ORDER) -> MoyalExpansion:
    _check_order(N, max_order)
    terms = [moyal_term(f, g, n, at=lattice, max_order=max_order) for n in range(N + 1)]
    return MoyalExpansion(terms, N, lattice.eps)


def moyal_truncated(f: SymbolLike, g: SymbolLike, N: int, eps: float, at=None,
                    max_order: int = MAX_ORDER):
    """sum_{n <= N} eps^n (f # g)_(n), as a Symbol or sampled at ``at``."""
    _check_order(N, max_order)
    if at is not None:
        if isinstance(at, Lattice):
            return moyal_expansion(f, g, N, at, max_order).total()
        return sum(eps ** n * moyal_term(f, g, n, at=at, max_order=max_order) for n in range(N + 1))
    terms = [moyal_term(f, g, n, max_order=max_order) for n in range(N + 1)]
    d = terms[0].d_fast
    fn = lambda x, xi: sum(eps ** n * t(x, xi) for n, t in enumerate(terms))
    return Symbol(fn, d, backend="fd", fd_step=terms[0].fd_step, decays=terms[0].decays,
                  name=f"{f.name}#{g.name}<={N}")


def moyal_exact(f: SymbolLike, g: SymbolLike, eps: Optional[float] = None,
                grid: Optional[PhaseSpaceGrid] = None, check: bool = True) -> PhaseField:
    """Symbol of Op(f) Op(g), sampled on the lattice of ``grid`` at ``eps``."""
    A = weyl_quantize(f, grid, eps, check=check)
    B = weyl_quantize(g, A.grid, A.eps, check=check)
    return dequantize(A @ B)


def moyal_commutator(f: SymbolLike, g: SymbolLike, eps: float, mode: str = "exact",
                     N: int = 2, grid: Optional[PhaseSpaceGrid] = None, at=None, check: bool = True):
    """[f, g]_# = f # g - g # f.

    ``mode="exact"`` uses the operator route on ``grid``.  ``mode="truncated"``
    sums the expansion through order N, sampled at ``at`` (defaults to the
    lattice of ``grid``).
    """
    if mode == "exact":
        return moyal_exact(f, g, eps, grid, check) - moyal_exact(g, f, eps, grid, check)
    if mode != "truncated":
        raise ValueError("mode must be 'exact' or 'truncated'")
    if at is None and grid is not None:
        at = Lattice(grid, eps)
    fg = moyal_truncated(f, g, N, eps, at=at)
    gf = moyal_truncated(g, f, N, eps, at=at)
    return fg - gf
