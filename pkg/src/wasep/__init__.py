"""Simulation and verification toolkit for weakly asymmetric exclusion
processes: exact kinetic Monte Carlo on the torus, fluctuation fields,
Ornstein-Uhlenbeck / fBm(1/4) reference laws and a hydrodynamic solver.
"""

__version__ = "0.1.0"

from .engine import SimParams, init, run_until, spawn_trajectory, step
from .lattice import (
    Configuration,
    LocalFunction,
    RateModel,
    ThermoFunctions,
    gradient_pair_model,
    new_bernoulli_config,
    solve_gradient,
    ssep,
    thermo,
)
from .observables import (
    FrameShift,
    TestFunction,
    box_indicator,
    density_field,
    gaussian_bump,
    heaviside_ramp,
)

__all__ = [
    "__version__",
    "Configuration",
    "FrameShift",
    "LocalFunction",
    "RateModel",
    "SimParams",
    "TestFunction",
    "ThermoFunctions",
    "box_indicator",
    "density_field",
    "gaussian_bump",
    "gradient_pair_model",
    "heaviside_ramp",
    "init",
    "new_bernoulli_config",
    "run_until",
    "solve_gradient",
    "spawn_trajectory",
    "ssep",
    "step",
    "thermo",
]
