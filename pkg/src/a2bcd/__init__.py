"""Asynchronous accelerated nonuniform randomized block coordinate descent.

Public entry points are re-exported here; see the submodules for the full
API.
"""

from .core import (BlockPartition, BlockSampler, InvalidParameterError, ProblemOracle,
                   ProblemParams, build_params, check_block_gradient, sample_block)
from .schedule import (PSI_MAX, Schedule, ScheduleWarning, asynchronicity_parameter,
                       async_weights, make_schedule, max_tau_for_psi, update_coefficients)
from .problems import (LabeledDataset, LibsvmParseError, QuadraticOracle, RidgeDualProblem,
                       WorstCaseProblem, dump_libsvm, load_libsvm, lower_bound_ratio,
                       parse_libsvm, random_ridge_data, ridge_dual_oracle, synth_quadratic,
                       worst_case_oracle)
from .solvers import (Checkpoint, DelaySchedule, DenseState, Trace, a2bcd_step, nu_acdm_run,
                      rbcd_run, rbcd_step, read_trace_csv, reference_optimum, run_simulated)
from .diagnostics import (LyapunovMeter, RateFit, compare_traces, expected_next_rho, fit_rate,
                          fit_trace, lyapunov)
from .runtime import (SparseA2BCD, StalenessRecord, dry_run_tau, recover_yv, run_parallel,
                      sparse_step)
from . import ode

__version__ = "0.1.0"
