"""Interaction-enriched unified potential field planner and simulator.

Subpackage map: dynamics (Frenet kinematics), population (styles, measures,
Wasserstein-2), fieldgrid (grid + operators), fields (benefit/risk solves),
fusion (Cahn-Hilliard), control (Pontryagin sweep + best response), scenario
(config), sim (closed loop), cli (entry point).
"""

from . import cli, control, dynamics, fieldgrid, fields, fusion, population, scenario, sim
from .errors import (
    ConvergenceError,
    InstabilityError,
    InvalidParameterError,
    IupfError,
    NumericsError,
    OutOfDomainError,
    ScenarioError,
)

__version__ = "0.1.0"

__all__ = [
    "cli",
    "control",
    "dynamics",
    "fieldgrid",
    "fields",
    "fusion",
    "population",
    "scenario",
    "sim",
    "IupfError",
    "InvalidParameterError",
    "NumericsError",
    "OutOfDomainError",
    "ConvergenceError",
    "InstabilityError",
    "ScenarioError",
    "__version__",
]
