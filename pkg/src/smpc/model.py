"""Problem data: plant, disturbance, chance constraints, cost, controller config.

All types are plain frozen dataclasses that coerce shapes/dtypes on
construction but defer invariant checking to `validate`, which reports
every violated invariant by name instead of stopping at the first.
Problems are immutable after validation and safe to share across workers.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .sets import Polytope

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

__all__ = [
    "LtiSystem",
    "DisturbanceModel",
    "ChanceSpec",
    "CostSpec",
    "ControllerConfig",
    "Problem",
    "validate",
    "load_problem",
    "save_problem",
]

VARIANTS = ("ic", "lxi", "bak", "lqr")
DISTURBANCE_KINDS = ("gaussian", "moment-only")
_SYM_TOL = 1e-12


def _matrix(value) -> np.ndarray:
    return np.atleast_2d(np.asarray(value, dtype=float))


@dataclass(frozen=True)
class LtiSystem:
    """x(k+1) = A x(k) + B u(k) + w(k)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _matrix(self.A))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "B", B)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class DisturbanceModel:
    """Zero-mean iid disturbance; only the second moment enters the design.

    `kind` selects the concentration bound used for the reachable sets:
    "gaussian" allows the exact chi-squared level, "moment-only" falls back
    to the distribution-free Chebyshev level.
    """

    covariance: np.ndarray
    kind: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "covariance", _matrix(self.covariance))


@dataclass(frozen=True)
class ChanceSpec:
    """P(x in state_set) >= state_level and optionally P(u in input_set) >= input_level."""

    state_set: Polytope
    state_level: float
    input_set: Polytope | None = None
    input_level: float | None = None


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _matrix(self.Q))
        object.__setattr__(self, "R", _matrix(self.R))


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int
    variant: str = "ic"
    xi_penalty: float = 0.0  # slope of the linear interpolation penalty; lxi only


@dataclass(frozen=True)
class Problem:
    system: LtiSystem
    disturbance: DisturbanceModel
    chance: ChanceSpec
    cost: CostSpec
    controller: ControllerConfig

    def with_variant(self, variant: str) -> "Problem":
        return replace(self, controller=replace(self.controller, variant=variant))


def _check_psd(M: np.ndarray, name: str, violations: list[str], *, strict: bool) -> None:
    sym_err = float(np.abs(M - M.T).max())
    if sym_err > _SYM_TOL * (1.0 + float(np.abs(M).max())):
        violations.append(f"{name}: not symmetric (asymmetry {sym_err:.2e})")
        return
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    norm = max(1.0, float(np.abs(eigs).max()))
    if strict:
        if eigs.min() <= 0.0:
            violations.append(f"{name}: not positive definite (min eigenvalue {eigs.min():.2e})")
    elif eigs.min() < -_SYM_TOL * norm:
        violations.append(f"non-PSD covariance: {name} has min eigenvalue {eigs.min():.2e}")


def validate(problem: Problem) -> Problem:
    """Return the problem unchanged iff every type invariant holds.

    Otherwise raises ValidationError listing each violated invariant.
    Idempotent: a validated problem validates again to itself.
    """
    v: list[str] = []
    sys_ = problem.system
    n, nu = sys_.n_states, sys_.n_inputs
    if sys_.A.shape[0] != sys_.A.shape[1]:
        v.append(f"dimension mismatch: system.A is {sys_.A.shape}, must be square")
    if sys_.B.shape[0] != sys_.A.shape[0]:
        v.append(f"dimension mismatch: system.B has {sys_.B.shape[0]} rows, expected {n}")
    if not (np.all(np.isfinite(sys_.A)) and np.all(np.isfinite(sys_.B))):
        v.append("system matrices must be finite")

    dist = problem.disturbance
    if dist.covariance.shape != (n, n):
        v.append(f"dimension mismatch: sigma_w is {dist.covariance.shape}, expected {(n, n)}")
    else:
        _check_psd(dist.covariance, "sigma_w", v, strict=False)
    if dist.kind not in DISTURBANCE_KINDS:
        v.append(f"disturbance.kind must be one of {DISTURBANCE_KINDS}, got {dist.kind!r}")

    ch = problem.chance
    if ch.state_set.dim != n:
        v.append(f"dimension mismatch: state constraint set lives in R^{ch.state_set.dim}, expected R^{n}")
    if not np.all(ch.state_set.h > 0.0):
        v.append("origin outside a constraint set: state set must contain the origin strictly")
    _check_level(ch.state_level, "p_x", v)
    if (ch.input_set is None) != (ch.input_level is None):
        v.append("input_set and input_level must be given together")
    if ch.input_set is not None:
        if ch.input_set.dim != nu:
            v.append(f"dimension mismatch: input constraint set lives in R^{ch.input_set.dim}, expected R^{nu}")
        if not np.all(ch.input_set.h > 0.0):
            v.append("origin outside a constraint set: input set must contain the origin strictly")
        if ch.input_level is not None:
            _check_level(ch.input_level, "p_u", v)

    cost = problem.cost
    if cost.Q.shape != (n, n):
        v.append(f"dimension mismatch: Q is {cost.Q.shape}, expected {(n, n)}")
    else:
        _check_psd(cost.Q, "cost.Q", v, strict=False)
    if cost.R.shape != (nu, nu):
        v.append(f"dimension mismatch: R is {cost.R.shape}, expected {(nu, nu)}")
    else:
        _check_psd(cost.R, "cost.R", v, strict=True)

    ctl = problem.controller
    if not (isinstance(ctl.horizon, (int, np.integer)) and ctl.horizon >= 1):
        v.append(f"controller.horizon must be an integer >= 1, got {ctl.horizon!r}")
    if ctl.variant not in VARIANTS:
        v.append(f"controller.variant must be one of {VARIANTS}, got {ctl.variant!r}")
    if not (np.isfinite(ctl.xi_penalty) and ctl.xi_penalty >= 0.0):
        v.append(f"controller.xi_penalty must be a nonnegative real, got {ctl.xi_penalty!r}")

    if v:
        raise ValidationError(v)
    return problem


def _check_level(p: float, name: str, violations: list[str]) -> None:
    if p is None or not np.isfinite(p):
        violations.append(f"{name} outside (0,1): got {p!r}")
    elif p >= 1.0:
        violations.append(f"hard chance constraint unsupported: {name} = {p} (requires bounded disturbances)")
    elif p <= 0.0:
        violations.append(f"{name} outside (0,1): got {p}")


# --- TOML problem files ----------------------------------------------------

_SCHEMA = {
    "system": {"A", "B"},
    "disturbance": {"sigma_w", "kind"},
    "constraints": {"state_H", "state_h", "p_x", "input_H", "input_h", "p_u"},
    "cost": {"Q", "R"},
    "controller": {"horizon", "variant", "xi_penalty"},
}
_REQUIRED = {
    "system": {"A", "B"},
    "disturbance": {"sigma_w", "kind"},
    "constraints": {"state_H", "state_h", "p_x"},
    "cost": {"Q", "R"},
    "controller": {"horizon", "variant", "xi_penalty"},
}


def load_problem(path: str | Path) -> Problem:
    """Parse and validate a TOML problem file; unknown keys are rejected."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = _toml.load(f)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    for section in data:
        if section not in _SCHEMA:
            raise ParseError(f"{path}: unknown section [{section}]")
    for section, required in _REQUIRED.items():
        if section not in data:
            raise ParseError(f"{path}: missing section [{section}]")
        table = data[section]
        if not isinstance(table, dict):
            raise ParseError(f"{path}: [{section}] must be a table")
        for key in table:
            if key not in _SCHEMA[section]:
                raise ParseError(f"{path}: unknown key '{key}' in [{section}]")
        for key in required:
            if key not in table:
                raise ParseError(f"{path}: missing key '{key}' in [{section}]")

    cons = data["constraints"]
    if ("input_H" in cons) != ("input_h" in cons):
        raise ParseError(f"{path}: input_H and input_h must be given together")
    input_set = None
    if "input_H" in cons:
        input_set = Polytope(cons["input_H"], cons["input_h"])

    try:
        problem = Problem(
            system=LtiSystem(data["system"]["A"], data["system"]["B"]),
            disturbance=DisturbanceModel(data["disturbance"]["sigma_w"], data["disturbance"]["kind"]),
            chance=ChanceSpec(
                state_set=Polytope(cons["state_H"], cons["state_h"]),
                state_level=float(cons["p_x"]),
                input_set=input_set,
                input_level=float(cons["p_u"]) if "p_u" in cons else None,
            ),
            cost=CostSpec(data["cost"]["Q"], data["cost"]["R"]),
            controller=ControllerConfig(
                horizon=int(data["controller"]["horizon"]),
                variant=str(data["controller"]["variant"]),
                xi_penalty=float(data["controller"]["xi_penalty"]),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return validate(problem)


def _toml_value(value) -> str:
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip representation
    if isinstance(value, np.ndarray):
        return json.dumps(value.tolist())
    raise TypeError(f"cannot serialize {type(value)}")


def save_problem(problem: Problem, path: str | Path) -> None:
    """Write the TOML schema; floats use shortest round-trip formatting."""
    lines = ["[system]",
             f"A = {_toml_value(problem.system.A)}",
             f"B = {_toml_value(problem.system.B)}",
             "",
             "[disturbance]",
             f"sigma_w = {_toml_value(problem.disturbance.covariance)}",
             f"kind = {_toml_value(problem.disturbance.kind)}",
             "",
             "[constraints]",
             f"state_H = {_toml_value(problem.chance.state_set.H)}",
             f"state_h = {_toml_value(problem.chance.state_set.h)}",
             f"p_x = {_toml_value(problem.chance.state_level)}"]
    if problem.chance.input_set is not None:
        lines += [f"input_H = {_toml_value(problem.chance.input_set.H)}",
                  f"input_h = {_toml_value(problem.chance.input_set.h)}",
                  f"p_u = {_toml_value(problem.chance.input_level)}"]
    lines += ["",
              "[cost]",
              f"Q = {_toml_value(problem.cost.Q)}",
              f"R = {_toml_value(problem.cost.R)}",
              "",
              "[controller]",
              f"horizon = {_toml_value(problem.controller.horizon)}",
              f"variant = {_toml_value(problem.controller.variant)}",
              f"xi_penalty = {_toml_value(problem.controller.xi_penalty)}",
              ""]
    Path(path).write_text("\n".join(lines))
