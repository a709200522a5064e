"""Optimal almost-everywhere stabilization of discrete-time maps by Lyapunov-measure LPs."""

from .config import RunConfig, load_config, parse_config
from .discretization import (ControlGrid, Partition, TransitionFamily, build_partition,
                             build_transition_family, cell_of, lebesgue_vector)
from .errors import (AssemblyError, CertificateError, ConfigError, ConvergenceError, DomainError,
                     ExtractionError, LyapctlError, PreconditionError, ValidationError)
from .feasibility import grow_tree, transience_certificate
from .lp_core import (StabilizationLP, Tolerances, feasibility_phase, solve_dual,
                      solve_stabilization, verify_kkt)
from .lp_solver import LinearProgram, SolverOptions, solve_lp
from .simulate import DecayReport, RolloutConfig, rollout
from .synthesis import certify, extract_policy, lyapunov_measure, theta_tilde
from .systems import (StateBox, SystemDef, evaluate, explicit_matrix_system, identity_system,
                      shift_system, standard_map)

__version__ = "0.1.0"
