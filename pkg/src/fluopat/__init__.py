"""Quantitative fluorescence photoacoustic tomography in the transport regime.

Forward model: coupled excitation/emission radiative transport with an
internal photoacoustic datum.  Reconstructions: direct efficiency
recovery, linearized absorption recovery, multi-source Landweber
iteration for the coefficient pair, and nonlinear regularized least
squares with adjoint-state gradients.
"""

from .forward import (
    ForwardSolution,
    OpticalMedium,
    compute_datum,
    compute_linearized_datum,
    linearized_datum,
    solve_forward,
    solve_linearized,
)
from .grid import (
    Mesh,
    OrdinateSet,
    build_mesh,
    build_ordinates,
    classify_boundary,
    l2_inner,
    l2_norm,
)
from .phantoms import (
    Inclusion,
    NoiseSpec,
    PhantomSpec,
    add_noise,
    build_phantom_fields,
    checkerboard_absorption,
    checkerboard_scattering,
    default_phantom_spec,
    relative_l2_error,
)
from .rte import (
    Discretization,
    ScatteringKernel,
    SolverError,
    TransportProblem,
    apply_K_I,
    apply_K_Theta,
    side_inflow,
    solve_adjoint_rte,
    solve_rte,
    uniform_inflow,
)

__version__ = "0.1.0"

__all__ = [
    "ForwardSolution", "OpticalMedium", "compute_datum",
    "compute_linearized_datum", "linearized_datum", "solve_forward",
    "solve_linearized", "Mesh", "OrdinateSet", "build_mesh",
    "build_ordinates", "classify_boundary", "l2_inner", "l2_norm",
    "Inclusion", "NoiseSpec", "PhantomSpec", "add_noise",
    "build_phantom_fields", "checkerboard_absorption",
    "checkerboard_scattering", "default_phantom_spec", "relative_l2_error",
    "Discretization", "ScatteringKernel", "SolverError", "TransportProblem",
    "apply_K_I", "apply_K_Theta", "side_inflow", "solve_adjoint_rte",
    "solve_rte", "uniform_inflow",
]
