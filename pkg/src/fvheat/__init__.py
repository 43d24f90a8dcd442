"""Finite volume element method for the heat equation on triangulated polygons,
with tools for measuring smooth and nonsmooth-data convergence rates."""

from .analysis import (ConvergenceTable, EigenSeriesData, ManufacturedProblem, ProbeConfig,
                       convergence_study, error_norms, exact_solution, fit_rate, probe_quantity,
                       probe_study, probe_vector, qh_norm_estimate, qnorm_study, temporal_study)
from .assembly import (CoefficientField, fv_flux_stiffness_matrix, fv_mass_matrix, mass_matrix,
                       mh_apply, operator_matrix, stiffness_matrix)
from .estimator import FVEHeatSolver
from .exceptions import (AssemblyError, FVHeatError, GenerationFailedError, InvalidParameterError,
                         MeshParseError, MeshValidationError, NumericalError)
from .mesh import (Mesh, classify_patch, generate, generate_almost_symmetric,
                   generate_counterexample_interface, generate_counterexample_stripes,
                   generate_piecewise_almost_symmetric, generate_uniform_symmetric, load_mesh,
                   refine, save_mesh, symmetry_report)
from .operators import (FVESystem, discrete_operator_apply, eigendecompose, interpolate,
                        l2_project, qh_apply, ritz_project)
from .timestepping import Propagator, TimeGrid, backward_euler, crank_nicolson, propagate

__version__ = "0.1.0"
