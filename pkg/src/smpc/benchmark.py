"""Built-in DC-DC converter regulation benchmark.

The standard SMPC benchmark: a 2-state converter model with a single
chance constraint on the first state, run from an initial state on the
border of the initially feasible region.  Compiled in so the reproduction
command needs zero setup; `data/dcdc.toml` carries the same numbers as a
sample problem file.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .model import (ChanceSpec, ControllerConfig, CostSpec, DisturbanceModel,
                    LtiSystem, Problem, validate)
from .sets import Polytope

__all__ = ["dcdc_problem", "DCDC_X0", "TABLE_VIOLATION_PCT", "TABLE_COST_PCT",
           "bundled_problem_path"]

DCDC_X0 = np.array([0.6455, 1.3751])

# published Monte Carlo results for this benchmark (percent)
TABLE_VIOLATION_PCT = {"lqr": 94.47, "ic": 10.79, "lxi": 9.19, "bak": 8.39}
TABLE_COST_PCT = {"lqr": 100.00, "ic": 109.76, "lxi": 113.95, "bak": 112.95}

# reference terminal set as published (two displayed facets)
REFERENCE_TERMINAL_H = np.array([[1.0000, 0.0000], [-0.1559, 1.8933]])
REFERENCE_TERMINAL_h = np.array([0.6455, 0.6455])
REFERENCE_TIGHTENED_OFFSET = 0.6455


def dcdc_problem(variant: str = "ic") -> Problem:
    """The benchmark problem; the variant is selectable, everything else fixed."""
    return validate(Problem(
        system=LtiSystem(A=[[1.0, 0.0075], [-0.143, 0.996]],
                         B=[[4.798], [0.115]]),
        disturbance=DisturbanceModel(covariance=0.1 * np.eye(2), kind="gaussian"),
        chance=ChanceSpec(state_set=Polytope([[1.0, 0.0]], [2.0]), state_level=0.6),
        cost=CostSpec(Q=np.diag([1.0, 10.0]), R=[[10.0]]),
        controller=ControllerConfig(horizon=8, variant=variant, xi_penalty=1600.0),
    ))


def bundled_problem_path():
    """Path of the shipped dcdc.toml sample file."""
    return resources.files("smpc").joinpath("data/dcdc.toml")
