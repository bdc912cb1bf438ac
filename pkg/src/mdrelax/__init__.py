"""Hermite-Birkhoff predictor-corrector integrators with relaxation."""

from .errors import (BackgroundSolveFailed, ConditioningError, CorrectorFailed,
                     InsufficientAsymptoticRange, MalformedCSV, MDRelaxError, NewtonDiverged,
                     PredictorFailed, ReferenceDivergence, RelaxationRootNotFound, SingularJacobian,
                     SingularState, SingularSystem, StepFailed, UnknownTableau)
from .harness import ConvergenceReport, RunSpec, cmd_convergence, cmd_gamma_trace, cmd_growth
from .hbpc import (HBPCConfig, RunRecord, StageBlock, background_rk_step, correct, hbpc_step,
                   predict, quadrature, update)
from .problems import (IVP, ReferenceSolution, fd_directional, fd_jacobian, get_problem, kepler,
                       kepler_reference, oscillator, reference_for)
from .relaxation import RelaxedStep, Trajectory, integrate, relax
from .solvers import NewtonSettings, RootSettings, damped_newton, solve_gamma
from .tableau import MDTableau, builtin, hermite_birkhoff_tableau, verify_quadrature_order

__version__ = "0.1.0"
