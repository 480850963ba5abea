"""Design and evaluation of theta-fair non-intrusive MAC protocols.

One primary user shares a slotted channel with N secondary users that run a
one-slot-memory random access protocol.  The subpackages cover the chain
model (:mod:`markov`), closed-form metrics (:mod:`analytics`), protocol
design (:mod:`optimizer`), slot-level simulation (:mod:`simulator`) and the
command-line front end (:mod:`cli`).
"""

from .analytics import collision_profile, full_metrics, metric_grid
from .core import (
    DesignProblem,
    InfeasibleError,
    Metrics,
    ModelDomainError,
    NetworkConfig,
    NumericalError,
    Protocol,
    TrafficModel,
    ValidationError,
    gamma_from_eta,
)
from .optimizer import DesignSolution, solve_constrained, solve_unconstrained, sweep
from .simulator import EnhancedPolicy, SimStats, fairness_estimate, run

__version__ = "0.1.0"

__all__ = [
    "DesignProblem",
    "DesignSolution",
    "EnhancedPolicy",
    "InfeasibleError",
    "Metrics",
    "ModelDomainError",
    "NetworkConfig",
    "NumericalError",
    "Protocol",
    "SimStats",
    "TrafficModel",
    "ValidationError",
    "collision_profile",
    "fairness_estimate",
    "full_metrics",
    "gamma_from_eta",
    "metric_grid",
    "run",
    "solve_constrained",
    "solve_unconstrained",
    "sweep",
]
