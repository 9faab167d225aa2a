"""Closed-loop control law: variant dispatch and the per-step input rule.

All SMPC variants share the same machinery and differ only in how the
initial nominal state is chosen:

  ic   - xi is a free decision variable (no penalty),
  lxi  - xi free with a linear penalty on using it,
  bak  - xi pinned: 0 when the measured state is feasible (decided by a
         phase-1 check, never by interpreting a failed solve), else 1,
  lqr  - plain u = Kx, no optimization.

After the solve, u = v_0 + K (x - z_0) and the first predicted state
A z_0 + B v_0 is stored for the next step's interpolation endpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qpsolve
from .errors import InitialInfeasibleError, InternalConsistencyError, SolverFailure
from .ocp import CondensedOcp, OcpSolution, TightenedProblem, extract

__all__ = ["Controller", "ControllerState", "StepDiagnostics", "xi_zero_fraction"]

XI_ZERO_TOL = 1e-6


@dataclass(frozen=True)
class ControllerState:
    z1_prev: np.ndarray        # stored prediction z_1(k-1)
    step_index: int
    variant: str
    last_solution: OcpSolution | None = None


@dataclass(frozen=True)
class StepDiagnostics:
    xi: float | None           # None for the lqr variant
    objective: float | None
    status: str
    backup_branch: bool = False


class Controller:
    """One controller per simulated run; holds the shared condensed problem.

    The condensed matrices are read-only after construction, so a single
    Controller may serve many independent runs as long as each run carries
    its own ControllerState.
    """

    def __init__(self, tp: TightenedProblem, variant: str):
        if variant not in ("ic", "lxi", "bak", "lqr"):
            raise ValueError(f"unknown variant {variant!r}")
        self.tp = tp
        self.variant = variant
        self.xi_penalty = tp.xi_penalty if variant == "lxi" else 0.0
        self._cond = CondensedOcp(tp) if variant != "lqr" else None

    def init(self, x0: np.ndarray) -> ControllerState:
        """Initial state with z_1(-1) = x0; checks initial feasibility.

        With z1_prev = x0 the interpolation degenerates (z_0 = x0 for every
        xi), so feasibility of the xi-pinned problem at x0 is exactly
        initial feasibility, and xi(0) = 0 is always available.
        """
        x0 = np.asarray(x0, dtype=float).ravel()
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        if self.variant != "lqr":
            G, h = self._cond.fixed_constraints(x0)
            if not qpsolve.check_feasible(ineq=(G, h)).feasible:
                raise InitialInfeasibleError(
                    f"x0 outside initially feasible region: {x0.tolist()}")
        return ControllerState(z1_prev=x0.copy(), step_index=0, variant=self.variant)

    def step(self, state: ControllerState, x: np.ndarray) -> tuple[np.ndarray, ControllerState, StepDiagnostics]:
        x = np.asarray(x, dtype=float).ravel()
        if not np.all(np.isfinite(x)):
            raise ValueError("measured state must be finite")
        tp = self.tp
        K = tp.design.K

        if self.variant == "lqr":
            u = K @ x
            new = replace(state, step_index=state.step_index + 1)
            return u, new, StepDiagnostics(xi=None, objective=None, status="lqr")

        backup = False
        if self.variant in ("ic", "lxi"):
            qp = self._cond.qp_free(x, state.z1_prev, self.xi_penalty)
            sol = qpsolve.solve(qp)
            if sol.status != "optimal":
                raise SolverFailure(
                    f"{self.variant} solve failed at step {state.step_index}: {sol.status}")
            ocp_sol = extract(tp, x, state.z1_prev, sol, xi_penalty=self.xi_penalty)
        else:  # bak
            G, h = self._cond.fixed_constraints(x)
            if qpsolve.check_feasible(ineq=(G, h)).feasible:
                xi_fix = 0.0
            else:
                xi_fix = 1.0
                backup = True
            z0 = x if xi_fix == 0.0 else state.z1_prev
            sol = qpsolve.solve(self._cond.qp_fixed(z0))
            if sol.status != "optimal":
                if backup:
                    raise InternalConsistencyError(
                        "backup branch infeasible, which the candidate argument excludes: "
                        f"step={state.step_index} x={x.tolist()} "
                        f"z1_prev={state.z1_prev.tolist()} status={sol.status}")
                raise SolverFailure(
                    f"bak solve failed despite a feasibility certificate: {sol.status}")
            ocp_sol = extract(tp, x, state.z1_prev, sol, xi_fixed=xi_fix)

        z0 = ocp_sol.z[0]
        v0 = ocp_sol.v[0]
        u = v0 + K @ (x - z0)
        new = ControllerState(z1_prev=tp.system.A @ z0 + tp.system.B @ v0,
                              step_index=state.step_index + 1,
                              variant=self.variant,
                              last_solution=ocp_sol)
        diag = StepDiagnostics(xi=ocp_sol.xi, objective=ocp_sol.objective,
                               status="optimal", backup_branch=backup)
        return u, new, diag


def xi_zero_fraction(log) -> float:
    """Fraction of steps with xi <= 1e-6 in a diagnostic log.

    Accepts StepDiagnostics sequences or raw xi values; undefined (raises)
    for runs without an interpolation variable (lqr).
    """
    xis = [entry.xi if isinstance(entry, StepDiagnostics) else entry for entry in log]
    xis = [x for x in xis if x is not None]
    if not xis:
        raise ValueError("no interpolation values in log (lqr run or empty log)")
    return sum(1 for x in xis if x <= XI_ZERO_TOL) / len(xis)
