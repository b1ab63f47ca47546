"""Steady-state power flow along a radial feeder, discrete and homogenized."""
from .analysis import (BranchSummary, FeederReport, StabilityFlags, classify_stability,
                       compare_profiles, count_flow_reversals, feeder_report,
                       losses_and_utilization)
from .bvp_shooting import (ShootingProblem, StaleRootError, find_branches, profile_from_vend,
                           shoot_residual, shoot_residuals)
from .cauchy_scan import (CriticalLength, NoseCurve, ScanTable, critical_length, nose_curve,
                          profile_at, recompute_physical, scan, scan_feeder, solutions_at_length)
from .discrete import (ConvergenceRow, DiscreteFeeder, DiscreteSolution, backward_recursion,
                       build_discrete, convergence_study, forward_sweep, solve_discrete)
from .model import (ConstantQ, DistflowError, DomainError, FeederParams, LowVoltageRamp,
                    RescaledParams, UnsupportedControlError, VoltageFeedback, ZeroPowerFactor,
                    control_q, effective_p, rescaled_params)
from .ode_core import (DEFAULT_TOL, DEFAULT_V_FLOOR, SingularityError, Termination, Trajectory,
                       integrate, physical_field, rescaled_field, rhs_physical, rhs_rescaled)
from .solution import BranchSet, SolutionProfile

__version__ = "0.1.0"
