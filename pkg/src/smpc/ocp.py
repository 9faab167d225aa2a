"""Deterministic surrogate optimal control problem in condensed form.

The decision vector is (v_0..v_{N-1}, xi) where xi interpolates the initial
nominal state between the measurement x and the stored previous prediction
z1_prev: z_0 = (1-xi) x + xi z1_prev.  States are eliminated through the
dynamics (z_i = A^i z_0 + sum_j A^(i-1-j) B v_j), so every stage/terminal
set membership becomes a linear inequality in the decision vector and the
cost sum ||v_i - K z_i||^2 over the horizon (weighted by R + B'PB) becomes
a PSD quadratic.  The dual-mode tail v_j = K z_j for j >= N contributes
nothing to the decision-dependent cost and stays implicit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qpsolve
from .errors import InternalConsistencyError
from .model import Problem
from .sets import Polytope, certify_invariant, certify_subset, mpi_terminal_set, pontryagin_diff
from .synthesis import DesignArtifacts
from .uncertainty import input_prs, state_prs

__all__ = ["TightenedProblem", "OcpSolution", "tighten", "assemble", "extract",
           "predicted_cost", "shifted_candidate"]

# post-hoc membership validation; 10x looser than the solver KKT tolerance
CONSTRAINT_TOL = 1e-7
RECON_TOL = 1e-9
XI_REGULARIZATION = 1e-10  # breaks ties when the objective is flat in xi


@dataclass(frozen=True)
class TightenedProblem:
    """Everything problem (12) needs: tightened sets, terminal set, horizon."""

    system: object
    design: DesignArtifacts
    Z: Polytope
    V: Polytope | None
    Z_F: Polytope
    N: int
    xi_penalty: float


def tighten(problem: Problem, design: DesignArtifacts) -> TightenedProblem:
    """Build Z, V and the terminal set, certifying the invariants they promise."""
    gaussian = problem.disturbance.kind == "gaussian"
    R_x = state_prs(design.sigma_inf, problem.chance.state_level, gaussian)
    Z = pontryagin_diff(problem.chance.state_set, R_x)
    V = None
    KV = None
    if problem.chance.input_set is not None:
        R_u = input_prs(design.K, design.sigma_inf, problem.chance.input_level, gaussian)
        V = pontryagin_diff(problem.chance.input_set, R_u)
        KV = Polytope(V.H @ design.K, V.h)
    Z_F = mpi_terminal_set(design.A_K, Z, KV)
    if not certify_subset(Z_F, Z):
        raise InternalConsistencyError("terminal set is not inside the tightened state set")
    if not certify_invariant(design.A_K, Z_F):
        raise InternalConsistencyError("terminal set failed its invariance certificate")
    return TightenedProblem(system=problem.system, design=design, Z=Z, V=V, Z_F=Z_F,
                            N=problem.controller.horizon,
                            xi_penalty=problem.controller.xi_penalty)


class CondensedOcp:
    """Precomputed condensing matrices, shared read-only across solves.

    Per-step assembly only forms the affine pieces that depend on the
    measured state x and the stored prediction z1_prev.
    """

    def __init__(self, tp: TightenedProblem):
        A = tp.system.A
        B = tp.system.B
        K = tp.design.K
        N = tp.N
        nx, nu = A.shape[0], B.shape[1]
        self.tp = tp
        self.N, self.nx, self.nu = N, nx, nu
        self.A, self.B, self.K = A, B, K

        Apow = [np.eye(nx)]
        for _ in range(N):
            Apow.append(A @ Apow[-1])
        self.Apow = np.array(Apow)

        # z_i = Apow[i] z0 + Sv[i] v
        Sv = np.zeros((N + 1, nx, N * nu))
        for i in range(1, N + 1):
            for j in range(i):
                Sv[i][:, j * nu:(j + 1) * nu] = Apow[i - 1 - j] @ B
        self.Sv = Sv

        # c = Mv v - Kstack z0 with Kstack rows K A^i
        self.Kstack = np.vstack([K @ Apow[i] for i in range(N)])
        self.Mv = np.eye(N * nu) - np.vstack([K @ Sv[i] for i in range(N)])
        W = tp.design.input_cost
        self.Wbar = np.kron(np.eye(N), W)
        self.Hvv = 2.0 * self.Mv.T @ self.Wbar @ self.Mv
        self.Hvv = 0.5 * (self.Hvv + self.Hvv.T)
        self.CW = 2.0 * self.Mv.T @ self.Wbar

        # constraint rows: state stages, terminal, then input stages;
        # rhs(z0) = h0 - GxA z0 and the xi column is GxA (z1_prev - x)
        rows_Gv, rows_GxA, rows_h = [], [], []
        for i in range(N):
            for r in range(tp.Z.nrows):
                rows_Gv.append(tp.Z.H[r] @ Sv[i])
                rows_GxA.append(tp.Z.H[r] @ Apow[i])
                rows_h.append(tp.Z.h[r])
        for r in range(tp.Z_F.nrows):
            rows_Gv.append(tp.Z_F.H[r] @ Sv[N])
            rows_GxA.append(tp.Z_F.H[r] @ Apow[N])
            rows_h.append(tp.Z_F.h[r])
        if tp.V is not None:
            for i in range(N):
                for r in range(tp.V.nrows):
                    row = np.zeros(N * nu)
                    row[i * nu:(i + 1) * nu] = tp.V.H[r]
                    rows_Gv.append(row)
                    rows_GxA.append(np.zeros(nx))
                    rows_h.append(tp.V.h[r])
        self.Gv = np.array(rows_Gv)
        self.GxA = np.array(rows_GxA)
        self.h0 = np.array(rows_h)

    def qp_free(self, x: np.ndarray, z1_prev: np.ndarray, xi_penalty: float) -> qpsolve.QpProblem:
        """Decision vector (v, xi)."""
        N, nu = self.N, self.nu
        d = z1_prev - x
        q = self.Kstack @ x
        r = self.Kstack @ d
        nv = N * nu
        H = np.zeros((nv + 1, nv + 1))
        H[:nv, :nv] = self.Hvv
        hvx = -self.CW @ r
        H[:nv, nv] = hvx
        H[nv, :nv] = hvx
        H[nv, nv] = 2.0 * (r @ self.Wbar @ r + XI_REGULARIZATION)
        g = np.empty(nv + 1)
        g[:nv] = -self.CW @ q
        g[nv] = 2.0 * (q @ self.Wbar @ r) + xi_penalty
        m = self.Gv.shape[0]
        G = np.zeros((m + 2, nv + 1))
        G[:m, :nv] = self.Gv
        G[:m, nv] = self.GxA @ d
        G[m, nv] = 1.0
        G[m + 1, nv] = -1.0
        h = np.concatenate([self.h0 - self.GxA @ x, [1.0, 0.0]])
        return qpsolve.QpProblem(H, g, ineq=(G, h))

    def qp_fixed(self, z0: np.ndarray) -> qpsolve.QpProblem:
        """Decision vector v only; the initial nominal state is pinned at z0."""
        g = -self.CW @ (self.Kstack @ z0)
        return qpsolve.QpProblem(self.Hvv, g, ineq=(self.Gv, self.h0 - self.GxA @ z0))

    def fixed_constraints(self, z0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.Gv, self.h0 - self.GxA @ z0


@dataclass(frozen=True)
class OcpSolution:
    v: np.ndarray          # (N, nu) input sequence
    xi: float
    z: np.ndarray          # (N+1, nx) nominal trajectory
    objective: float       # sum ||v_i - K z_i||^2_{R+B'PB} + xi_penalty*xi
    status: str


def assemble(tp: TightenedProblem, x: np.ndarray, z1_prev: np.ndarray,
             xi_fixed: float | None = None,
             xi_penalty: float | None = None) -> qpsolve.QpProblem:
    """Condense the surrogate problem into a QpProblem; assembly is total.

    xi_fixed pins z_0 = (1-xi) x + xi z1_prev instead of optimizing xi; the
    free mode appends xi as the last decision variable with bounds [0, 1].
    xi_penalty overrides the configured slope (the controller passes 0
    for variants that do not penalize the interpolation).
    """
    x = np.asarray(x, dtype=float).ravel()
    z1_prev = np.asarray(z1_prev, dtype=float).ravel()
    cond = CondensedOcp(tp)
    if xi_fixed is None:
        penalty = tp.xi_penalty if xi_penalty is None else xi_penalty
        return cond.qp_free(x, z1_prev, penalty)
    z0 = (1.0 - xi_fixed) * x + xi_fixed * z1_prev
    return cond.qp_fixed(z0)


def extract(tp: TightenedProblem, x: np.ndarray, z1_prev: np.ndarray,
            solution: qpsolve.QpSolution, xi_fixed: float | None = None,
            xi_penalty: float | None = None) -> OcpSolution:
    """Reconstruct the nominal trajectory and validate every solution invariant.

    Any violation is a solver bug surfacing and raises instead of being
    swallowed; callers never see an inconsistent OcpSolution.
    """
    if solution.status != "optimal":
        raise ValueError(f"cannot extract from a non-optimal solution ({solution.status})")
    x = np.asarray(x, dtype=float).ravel()
    z1_prev = np.asarray(z1_prev, dtype=float).ravel()
    N, nu, nx = tp.N, tp.system.B.shape[1], tp.system.A.shape[0]
    if xi_fixed is None:
        v = solution.x[:N * nu].reshape(N, nu)
        xi = float(solution.x[N * nu])
    else:
        v = solution.x.reshape(N, nu)
        xi = float(xi_fixed)
    if not (-RECON_TOL <= xi <= 1.0 + RECON_TOL):
        raise InternalConsistencyError(f"xi = {xi} outside [0, 1]")
    z = np.empty((N + 1, nx))
    z[0] = (1.0 - xi) * x + xi * z1_prev
    for i in range(N):
        z[i + 1] = tp.system.A @ z[i] + tp.system.B @ v[i]
    for i in range(N):
        if not np.all(tp.Z.H @ z[i] <= tp.Z.h + CONSTRAINT_TOL):
            raise InternalConsistencyError(f"nominal state z_{i} violates the tightened set")
        if tp.V is not None and not np.all(tp.V.H @ v[i] <= tp.V.h + CONSTRAINT_TOL):
            raise InternalConsistencyError(f"input v_{i} violates the tightened input set")
    if not np.all(tp.Z_F.H @ z[N] <= tp.Z_F.h + CONSTRAINT_TOL):
        raise InternalConsistencyError("terminal nominal state violates the terminal set")
    c = v - z[:N] @ tp.design.K.T
    W = tp.design.input_cost
    penalty = tp.xi_penalty if xi_penalty is None else xi_penalty
    obj = float(np.einsum("ij,jk,ik->", c, W, c)) + (penalty * xi if xi_fixed is None else 0.0)
    return OcpSolution(v=v, xi=xi, z=z, objective=obj, status=solution.status)


def predicted_cost(x: np.ndarray, c_sequence: np.ndarray, design: DesignArtifacts) -> float:
    """Expected infinite-horizon cost ||x||^2_P - tr(sigma_inf P) + sum ||c_i||^2."""
    x = np.asarray(x, dtype=float).ravel()
    c = np.atleast_2d(np.asarray(c_sequence, dtype=float))
    const = float(np.trace(design.sigma_inf @ design.P))
    return float(x @ design.P @ x) - const + float(np.einsum("ij,jk,ik->", c, design.input_cost, c))


def shifted_candidate(tp: TightenedProblem, prev: OcpSolution) -> tuple[np.ndarray, float]:
    """Shifted previous solution (v_{i+1}, terminal input K z_N, xi = 0).

    The recursive-feasibility candidate: feasible for the next step's
    problem whenever the terminal set is invariant.
    """
    v_cand = np.vstack([prev.v[1:], (tp.design.K @ prev.z[tp.N]).reshape(1, -1)])
    return v_cand, 0.0
