"""Phase-space (Weyl) quantization and semiclassical analysis on a periodic grid."""
from .phasespace import (PhaseSpaceGrid, make_grid, symplectic_form, Symbol, PhaseField, Lattice,
                         differentiate, poisson_bracket, gaussian_symbol, polynomial_symbol,
                         constant_symbol, matrix_symbol)
from .quantize import (QuantizedOperator, WaveFunction, WignerField, weyl_quantize, dequantize,
                       wigner_transform, fourier_wigner, symplectic_fourier, phase_space_expectation)
from .moyal import moyal_term, moyal_truncated, moyal_expansion, moyal_exact, moyal_commutator
from .dynamics import (hamilton_flow, quantum_propagator, egorov_error, wigner_state_error,
                       ehrenfest_track, make_wavepacket, loglog_slope)
from .sapt import (FastModel, GapClosureError, spectral_decompose, sapt_first_order, defect_residuals,
                   berry_connection, berry_curvature, bo_effective_dynamics_error)

__all__ = [
    "PhaseSpaceGrid", "make_grid", "symplectic_form", "Symbol", "PhaseField", "Lattice",
    "differentiate", "poisson_bracket", "gaussian_symbol", "polynomial_symbol", "constant_symbol",
    "matrix_symbol", "QuantizedOperator", "WaveFunction", "WignerField", "weyl_quantize", "dequantize",
    "wigner_transform", "fourier_wigner", "symplectic_fourier", "phase_space_expectation",
    "moyal_term", "moyal_truncated", "moyal_expansion", "moyal_exact", "moyal_commutator",
    "hamilton_flow", "quantum_propagator", "egorov_error", "wigner_state_error", "ehrenfest_track",
    "make_wavepacket", "loglog_slope", "FastModel", "GapClosureError", "spectral_decompose",
    "sapt_first_order", "defect_residuals", "berry_connection", "berry_curvature",
    "bo_effective_dynamics_error",
]

__version__ = "0.1.0"
