"""Communication-efficient distributed recursive estimation.

Simulation library for the CREDO estimator, its always-communicating
consensus+innovations benchmark and the centralized oracle, with a
Monte Carlo harness for rate, communication-cost and covariance checks.
"""

from .estimators import (DistributedState, DivergenceError, EstimatorKind, OracleState, RunRecord,
                         StepContext, averaged_estimate, averaged_recursion, benchmark_step,
                         credo_step, oracle_step, run, run_batch)
from .harness import (EstimatorSpec, ExperimentConfig, RateFit, fit_loglog, monte_carlo,
                      mse_vs_comm, relative_mse, theoretical_covariance)
from .schedules import WeightSchedule, draw_gates, gated_laplacian
from .sensing import SensingModel, observe
from .topology import Topology, generate_rgg

__version__ = "0.1.0"

__all__ = [
    "DistributedState", "DivergenceError", "EstimatorKind", "OracleState", "RunRecord",
    "StepContext", "averaged_estimate", "averaged_recursion", "benchmark_step", "credo_step",
    "oracle_step", "run", "run_batch", "EstimatorSpec", "ExperimentConfig", "RateFit",
    "fit_loglog", "monte_carlo", "mse_vs_comm", "relative_mse", "theoretical_covariance",
    "WeightSchedule", "draw_gates", "gated_laplacian", "SensingModel", "observe", "Topology",
    "generate_rgg",
]
