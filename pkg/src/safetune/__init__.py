"""Safe multi-task Bayesian optimisation of a cascade servo controller.

Modules
-------
gp        GP regression with composite kernels and monotone bounds
safeset   lattice, pessimistic safe set, boundary and expansion tests
pso       particle swarm over the optimistic safe set
goose     the adaptive exploration loop and episode runner
plant     rotational drive simulator and operating-condition scenarios
metrics   cost, constraints and task parameters of an episode
baselines grid oracle and constrained BO
config    experiment configuration files
harness   calibration, runs, artifacts and figures
"""

from .baselines import CBO, EmptyFeasibleError, GridOracleResult, cbo_step, grid_search
from .config import ConfigError, ExperimentConfig, load_config
from .goose import LOG_COLUMNS, Goose, GooseConfig, run_episode_loop
from .gp import DegenerateModelError, GPModel, KernelConfig, ModelInconsistencyError
from .metrics import EpisodeMetrics, episode_metrics
from .plant import (ControllerParams, PlantConfig, ReferenceProfile, apply_scenario,
                    make_reference, simulate)
from .pso import pso_optimize
from .safeset import SafeGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "CBO", "EmptyFeasibleError", "GridOracleResult", "cbo_step", "grid_search",
    "ConfigError", "ExperimentConfig", "load_config",
    "LOG_COLUMNS", "Goose", "GooseConfig", "run_episode_loop",
    "DegenerateModelError", "GPModel", "KernelConfig", "ModelInconsistencyError",
    "EpisodeMetrics", "episode_metrics",
    "ControllerParams", "PlantConfig", "ReferenceProfile", "apply_scenario",
    "make_reference", "simulate",
    "pso_optimize", "SafeGrid", "build_grid",
]
