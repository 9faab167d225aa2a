"""Dense convex QP/LP solving with sound infeasibility detection.

Thin numpy layer over the interior-point kernels in `_ipm`: folds variable
bounds into inequality rows, eliminates equality constraints through a
null-space basis, and certifies every "optimal" answer with an independent
KKT check.  Infeasibility is only ever reported from a phase-1 slack
minimization, never inferred from solver divergence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _ipm

__all__ = ["QpProblem", "QpSolution", "FeasibilityResult", "solve", "check_feasible", "kkt_residuals"]

KKT_TOL = 1e-8
FEAS_TOL = 1e-8
_IPM_TOL = 1e-10
_MAX_ITER = 200


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Hx + g'x  s.t.  Gx <= h,  A_eq x = b_eq,  lo <= x <= hi."""

    hessian: np.ndarray
    gradient: np.ndarray
    ineq: tuple[np.ndarray, np.ndarray] | None = None
    eq: tuple[np.ndarray, np.ndarray] | None = None
    bounds: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        g = np.asarray(self.gradient, dtype=float).ravel()
        d = g.size
        if H.shape != (d, d):
            raise ValueError(f"hessian shape {H.shape} inconsistent with gradient size {d}")
        if np.abs(H - H.T).max() > 1e-12 * (1.0 + np.abs(H).max()):
            raise ValueError("hessian must be symmetric within 1e-12")
        H = 0.5 * (H + H.T)
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "gradient", g)
        if self.ineq is not None:
            G = np.atleast_2d(np.asarray(self.ineq[0], dtype=float))
            hv = np.asarray(self.ineq[1], dtype=float).ravel()
            if G.shape != (hv.size, d):
                raise ValueError("inequality dimensions inconsistent")
            object.__setattr__(self, "ineq", (G, hv))
        if self.eq is not None:
            A = np.atleast_2d(np.asarray(self.eq[0], dtype=float))
            b = np.asarray(self.eq[1], dtype=float).ravel()
            if A.shape != (b.size, d):
                raise ValueError("equality dimensions inconsistent")
            object.__setattr__(self, "eq", (A, b))
        if self.bounds is not None:
            lo = np.asarray(self.bounds[0], dtype=float).ravel()
            hi = np.asarray(self.bounds[1], dtype=float).ravel()
            if lo.size != d or hi.size != d:
                raise ValueError("bounds dimensions inconsistent")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def dim(self) -> int:
        return self.gradient.size

    def scale(self) -> float:
        s = max(1.0, np.abs(self.hessian).max(initial=0.0), np.abs(self.gradient).max(initial=0.0))
        if self.ineq is not None:
            s = max(s, np.abs(self.ineq[0]).max(initial=0.0), np.abs(self.ineq[1]).max(initial=0.0))
        return s

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)


@dataclass(frozen=True)
class QpSolution:
    status: str  # optimal | infeasible | max_iterations
    x: np.ndarray
    objective: float
    kkt: dict[str, float] | None
    ineq_multipliers: np.ndarray | None = None
    eq_multipliers: np.ndarray | None = None
    iterations: int = 0
    infeasibility: float = 0.0  # phase-1 optimum when status == infeasible


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    witness: np.ndarray | None
    certificate: float  # phase-1 optimal total slack


def _folded_rows(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All inequality rows including bounds, as one (G, h) pair."""
    d = problem.dim
    Gs, hs = [], []
    if problem.ineq is not None:
        Gs.append(problem.ineq[0])
        hs.append(problem.ineq[1])
    if problem.bounds is not None:
        lo, hi = problem.bounds
        eye = np.eye(d)
        finite_hi = np.isfinite(hi)
        finite_lo = np.isfinite(lo)
        if finite_hi.any():
            Gs.append(eye[finite_hi])
            hs.append(hi[finite_hi])
        if finite_lo.any():
            Gs.append(-eye[finite_lo])
            hs.append(-lo[finite_lo])
    if not Gs:
        return np.zeros((0, d)), np.zeros(0)
    return np.ascontiguousarray(np.vstack(Gs)), np.concatenate(hs)


def kkt_residuals(problem: QpProblem, x: np.ndarray, lam: np.ndarray, nu: np.ndarray | None = None) -> dict[str, float]:
    """Independent KKT residuals; deliberately recomputed from scratch.

    Keys: primal (constraint violation), dual (stationarity), complementarity.
    """
    G, h = _folded_rows(problem)
    primal = 0.0
    comp = 0.0
    if G.shape[0] > 0:
        slack = h - G @ x
        primal = max(primal, float(np.maximum(-slack, 0.0).max()))
        comp = float(np.abs(lam * slack).max()) if lam.size else 0.0
        primal = max(primal, float(np.maximum(-lam, 0.0).max()))
    stat = problem.hessian @ x + problem.gradient
    if G.shape[0] > 0 and lam.size:
        stat = stat + G.T @ lam
    if problem.eq is not None:
        A, b = problem.eq
        primal = max(primal, float(np.abs(A @ x - b).max()))
        if nu is not None:
            stat = stat + A.T @ nu
    return {"primal": primal, "dual": float(np.abs(stat).max()), "complementarity": comp}


def _nullspace(A: np.ndarray) -> np.ndarray:
    u, sv, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(sv > 1e-12 * (sv[0] if sv.size else 1.0) * max(A.shape)))
    return vt[rank:].T.copy()


def solve(problem: QpProblem, max_iter: int = _MAX_ITER, tol: float = _IPM_TOL) -> QpSolution:
    """Solve the QP; statuses are optimal / infeasible / max_iterations.

    "infeasible" always carries a phase-1 certificate (minimum total slack
    > FEAS_TOL); an iteration-capped solve is reported as max_iterations and
    must be treated as a hard failure by callers.
    """
    G, h = _folded_rows(problem)
    d = problem.dim
    H, g = problem.hessian, problem.gradient

    x_part = np.zeros(d)
    Z = None
    nu = None
    if problem.eq is not None:
        A, b = problem.eq
        x_part, *_ = np.linalg.lstsq(A, b, rcond=None)
        eq_res = float(np.abs(A @ x_part - b).max()) if b.size else 0.0
        if eq_res > FEAS_TOL * (1.0 + float(np.abs(b).max(initial=0.0))):
            return QpSolution("infeasible", x_part, float("nan"), None, infeasibility=eq_res)
        Z = _nullspace(A)
        Hr = Z.T @ H @ Z
        Hr = 0.5 * (Hr + Hr.T)
        gr = Z.T @ (H @ x_part + g)
        Gr = np.ascontiguousarray(G @ Z)
        hr = h - G @ x_part
    else:
        Hr, gr, Gr, hr = H, g, G, h

    if Gr.shape[1] == 0:
        # equality constraints pin the point completely
        y = np.zeros(0)
        status = _ipm.CONVERGED if (hr.size == 0 or (Gr @ y <= hr + FEAS_TOL).all()) else _ipm.MAX_ITER
        lam = np.zeros(hr.size)
        iters = 0
    else:
        y, lam, _, status, iters = _ipm.ipm_qp(
            np.ascontiguousarray(Hr), np.ascontiguousarray(gr),
            np.ascontiguousarray(Gr), np.ascontiguousarray(hr),
            tol, max_iter)

    if status != _ipm.CONVERGED:
        opt_slack, witness, p1_status = _ipm.phase1_lp(
            np.ascontiguousarray(Gr), np.ascontiguousarray(hr), _IPM_TOL, max_iter)
        if p1_status == _ipm.CONVERGED and opt_slack > FEAS_TOL:
            xw = x_part + (Z @ witness if Z is not None else witness)
            return QpSolution("infeasible", xw, float("nan"), None,
                              iterations=iters, infeasibility=float(opt_slack))
        return QpSolution("max_iterations", x_part + (Z @ y if Z is not None else y),
                          float("nan"), None, iterations=iters)

    x = x_part + (Z @ y if Z is not None else y)
    if problem.eq is not None:
        A, _ = problem.eq
        resid = -(H @ x + g + (G.T @ lam if lam.size else 0.0))
        nu, *_ = np.linalg.lstsq(A.T, resid, rcond=None)
    kkt = kkt_residuals(problem, x, lam, nu)
    bound = KKT_TOL * (1.0 + problem.scale())
    status_name = "optimal" if max(kkt.values()) <= bound else "max_iterations"
    return QpSolution(status_name, x, problem.objective(x), kkt,
                      ineq_multipliers=lam, eq_multipliers=nu, iterations=iters)


def check_feasible(ineq: tuple[np.ndarray, np.ndarray] | None = None,
                   eq: tuple[np.ndarray, np.ndarray] | None = None,
                   bounds: tuple[np.ndarray, np.ndarray] | None = None,
                   dim: int | None = None) -> FeasibilityResult:
    """Phase-1 feasibility of a constraint system; always decides.

    Equalities enter as paired inequalities so their violation is part of
    the minimized slack.  Feasible iff the optimal total slack <= FEAS_TOL.
    """
    pieces_G, pieces_h = [], []
    if ineq is not None:
        Gi = np.atleast_2d(np.asarray(ineq[0], dtype=float))
        pieces_G.append(Gi)
        pieces_h.append(np.asarray(ineq[1], dtype=float).ravel())
        dim = Gi.shape[1]
    if eq is not None:
        A = np.atleast_2d(np.asarray(eq[0], dtype=float))
        b = np.asarray(eq[1], dtype=float).ravel()
        pieces_G.extend([A, -A])
        pieces_h.extend([b, -b])
        dim = A.shape[1]
    if dim is None:
        raise ValueError("cannot infer dimension from empty constraint system")
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=float).ravel()
        hi = np.asarray(bounds[1], dtype=float).ravel()
        eye = np.eye(dim)
        fh, fl = np.isfinite(hi), np.isfinite(lo)
        if fh.any():
            pieces_G.append(eye[fh])
            pieces_h.append(hi[fh])
        if fl.any():
            pieces_G.append(-eye[fl])
            pieces_h.append(-lo[fl])
    if not pieces_G:
        return FeasibilityResult(True, np.zeros(dim), 0.0)
    G = np.ascontiguousarray(np.vstack(pieces_G))
    h = np.concatenate(pieces_h)
    opt, witness, status = _ipm.phase1_lp(G, h, _IPM_TOL, _MAX_ITER)
    if status != _ipm.CONVERGED:
        # phase-1 is bounded below by zero; a capped solve still brackets the
        # optimum from above, so only a clearly positive value is conclusive
        achieved = float(np.maximum(G @ witness - h, 0.0).sum())
        return FeasibilityResult(achieved <= FEAS_TOL, witness, achieved)
    return FeasibilityResult(bool(opt <= FEAS_TOL), witness, float(opt))
