"""Weighted dynamical low-rank DG solver for space-homogeneous relaxation."""

from .assembly import (EquilibriumFactors, MomentVectors, assemble_moments,
                       assemble_weighted_mass, compute_equilibrium, eval_G,
                       eval_G_times)
from .blocks import BlockDiagSPD, SqrtPair, matrix_sqrt
from .dlr import (DiagnosticParams, SIUIConfig, TheoryDiagnostics,
                  check_projection_bounds, g_gamma_curve, init_low_rank,
                  k_step, l_step, run_siui, s_step, siui_step, state_eq_error,
                  theory_diagnostics)
from .full_rank import (FullRunConfig, StepRecord, run_full, step_full,
                        weighted_l2_error)
from .mesh import Mesh, build_mesh, build_mesh_from_edges, eval_dg, project_initial
from .presets import (DiscreteSystem, RelaxationModel, benchmark_model,
                      benchmark_system, build_case_bases, build_system,
                      equilibrium_seeded_state)
from .weighted_linalg import (LowRankState, gqr, gsvd, numerical_rank,
                              weighted_gram_schmidt, wfrob, wnorm)

__version__ = "0.1.0"
