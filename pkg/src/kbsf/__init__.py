"""Kernel-based reinforcement learning and its stochastic-factorization compression."""

from .batch import (
    Factorization,
    ReducedModel,
    RepresentativeSet,
    batch_kbsf,
    build_factorization,
    kbsf_q,
    kbsf_q_many,
    rep_q_many,
    solve_reduced,
    swap_factors,
    vtilde,
)
from .core import (
    ConfigurationError,
    DomainError,
    FiniteMDP,
    Policy,
    SampleSet,
    Transition,
    ValueFunction,
    apply_gamma_operator,
    greedy_policy,
    read_samples_csv,
    write_samples_csv,
)
from .dp import SolverConfig, modified_policy_iteration, solve, value_iteration
from .incremental import IncrementalConfig, add_representative_state, empty_model, run_ikbsf, update_model
from .kbrl import KbrlModel, build_kbrl, kbrl_q, kbrl_q_many, solve_kbrl
from .kernels import KernelSpec, nearest
from .selection import SelectionStrategy, grid_centers, kmeans, random_subset, select

__version__ = "0.1.0"
