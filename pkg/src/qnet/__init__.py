"""Infinite-server queueing networks whose links fail and recover."""

from .background import BackgroundChain, NumericalFailure
from .fclt import (Regime, fclt_covariance, fclt_covariance_path, fluid_limit, gaussian_approx,
                   stationary_fclt_covariance, stationary_fluid)
from .model import (ALWAYS_UP, BlockSpec, LinkSpec, Network, NetworkSpec, NodeSpec,
                    ValidationError, make_network, validate)
from .moments import (STATIONARY, CapacityError, factorial_moments, stationary_first_moments,
                      transient_first_moments)
from .oracle import TruncationError, build_truncated, oracle_stationary, oracle_transient
from .perf import LossMetrics, loss_metrics
from .sim import SimConfig, run_ensemble, run_one, tagged_clients

__all__ = [
    "ALWAYS_UP", "BackgroundChain", "BlockSpec", "CapacityError", "LinkSpec", "LossMetrics",
    "Network", "NetworkSpec", "NodeSpec", "NumericalFailure", "Regime", "STATIONARY",
    "SimConfig", "TruncationError", "ValidationError", "build_truncated", "factorial_moments",
    "fclt_covariance", "fclt_covariance_path", "fluid_limit", "gaussian_approx", "loss_metrics",
    "make_network", "oracle_stationary", "oracle_transient", "run_ensemble", "run_one",
    "stationary_fclt_covariance", "stationary_first_moments", "stationary_fluid",
    "tagged_clients", "transient_first_moments", "validate",
]
