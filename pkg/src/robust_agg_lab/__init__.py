"""Robust distributed gradient methods: aggregation rules, adversarial constructions and stability checks."""

from .aggregation import (
    aggregate, aggregate_cwtm, aggregate_mean, aggregate_smea, check_robustness, kappa_cwtm, kappa_smea,
    trimmed_mean, RobustnessSpec,
)
from .analysis import (
    BoundQuery, StabilityReport, bound_table, cwtm_cococercivity_counterexample, empirical_kappa,
    measure_stability, theorem_bound,
)
from .engine import NeighboringPair, RunConfig, Trajectory, WorkerSet, monte_carlo_paired, run, run_paired
from .errors import (
    AttackInfeasibleError, CapacityError, ConfigurationError, ConstructionError, CounterexampleNotFoundError,
    LabError, PropertyViolation, ValidationError,
)
from .experiments import figure1, run_scenario
from .losses import LossModel, huberized_regression, linear1d, quadratic_mean, squared_regression
from .threats import (
    ConstructionParams, build_linear_lb, build_projected_lb, build_strongcvx_lb, build_tailored_attack,
)
from .verify import run_suites

__version__ = "0.1.0"
