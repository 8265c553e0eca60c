"""Numerical laboratory for maximum-rank behaviour of two degenerate
elliptic Dirichlet problems on a periodic space slab with time boundary.

Modules:
  grid        lattice, fields, finite-difference jets, binary dumps
  spectral    small symmetric eigensolver, rank test functions
  operators   the two nonlinear operators, derivatives, residual, Jacobian
  solver      damped Newton, homotopy continuation, level sweeps
  verifier    rank theorems on solved fields, elliptic-estimate probe
  identities  pointwise third-derivative identity checks on synthetic jets
  cli         reproducible command-line runs
"""

from .grid import GridSpec, Jet2, Jet3, ScalarField, build_grid, sample
from .operators import OperatorKind, Problem
from .solver import ContinuationSchedule, SolveReport, SolverConfig
from .spectral import RankPartition, Spectrum
from .verifier import ProbeReport, RankReport

__all__ = [
    "GridSpec", "Jet2", "Jet3", "ScalarField", "build_grid", "sample",
    "OperatorKind", "Problem",
    "ContinuationSchedule", "SolveReport", "SolverConfig",
    "RankPartition", "Spectrum",
    "ProbeReport", "RankReport",
]

__version__ = "0.1.0"
