"""Uplink payload and symbol allocation for hybrid optical-RF networks.

Devices send data over an RF uplink and may receive real-time decoder
feedback over an optical downlink that is blocked with some probability.
The package evaluates both packet error models, optimizes payload sizes and
symbol splits under a sum-log (proportional fairness) utility, and provides
an exact integer oracle plus a scenario sweep runner.
"""

from .config import ROUNDING_POLICIES, SolverConfig
from .errors import (BudgetExceededError, CombinatorialCapError, ConfigError,
                     DegenerateInputError, DomainError, HybridLinkError)
from .linkmath import (DeviceLink, DeviceReport, FadingModel, LogScalar, per_feedback,
                       per_feedback_approx, per_forward, per_forward_approx, q_tail,
                       q_tail_approx, throughput, throughput_dk)
from .oracle import OracleResult, best_k_given_n, dp_optimal
from .payload import PayloadProblem, PayloadResult, h_root, optimal_payload
from .planner import (Allocation, NetworkProblem, PlanResult, ThroughputReport,
                      alternating_solve, evaluate, round_to_integers, solve)
from .symbols import AllocationProblem, SCAResult, sca_allocate

__version__ = "0.1.0"

__all__ = [
    "Allocation", "AllocationProblem", "BudgetExceededError", "CombinatorialCapError",
    "ConfigError", "DegenerateInputError", "DeviceLink", "DeviceReport", "DomainError",
    "FadingModel", "HybridLinkError", "LogScalar", "NetworkProblem", "OracleResult",
    "PayloadProblem", "PayloadResult", "PlanResult", "ROUNDING_POLICIES", "SCAResult",
    "SolverConfig", "ThroughputReport", "alternating_solve", "best_k_given_n",
    "dp_optimal", "evaluate", "h_root", "optimal_payload", "per_feedback",
    "per_feedback_approx", "per_forward", "per_forward_approx", "q_tail",
    "q_tail_approx", "round_to_integers", "sca_allocate", "solve", "throughput",
    "throughput_dk",
]
