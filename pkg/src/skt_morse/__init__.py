"""Continuation, bifurcation and Morse-index analysis of the 1-D SKT cross-diffusion system."""

from .continuation import (
    BifurcationEvent,
    Branch,
    BranchPoint,
    StepControls,
    coexistence_start,
    continue_branch,
    detect_bifurcations,
    gap_children,
    segregation_measure,
    semitrivial_start,
    switch_branch,
    trivial_start,
)
from .errors import SKTError
from .evolution import Trajectory, evolve, growth_rate
from .limits import (
    discrete_laplacian_eigs,
    limiting_eigen_decomposition,
    solve_logistic,
    solve_ls1,
    solve_ls2,
    weighted_principal_eig,
)
from .model import (
    BranchTag,
    Grid,
    LinearizedSystem,
    ModelParams,
    SteadyState,
    assemble_linearization,
    assemble_residual,
    reference_setting,
)
from .solvers import NewtonSettings, Spectrum, eigen_spectrum, linear_solve, morse_index, newton_solve

__version__ = "0.1.0"
