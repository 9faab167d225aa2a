"""Offline synthesis: LQR prestabilizer, Riccati cost matrix, error covariance.

The discrete Riccati equation is solved by fixed-point iteration of the
value recursion from P0 = Q; stabilizability is certified by convergence
rather than a fragile structural rank test.  The steady-state covariance
comes from a doubling recurrence for the Lyapunov equation.  Every artifact
is re-checked against its defining residual before being returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SynthesisError

__all__ = ["DesignArtifacts", "solve_dare", "lqr_gain", "solve_dlyap", "steady_state_cost", "design"]

RESIDUAL_TOL = 1e-9
_FP_TOL = 1e-13
_DARE_MAX_ITER = 10**6
SPECTRAL_MARGIN = 1e-9


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Fixed point of P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P0 = Q."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for _ in range(_DARE_MAX_ITER):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ gain
        Pn = 0.5 * (Pn + Pn.T)
        if np.abs(Pn - P).max() <= _FP_TOL * (1.0 + np.abs(Pn).max()):
            P = Pn
            break
        P = Pn
    else:
        raise SynthesisError("Riccati iteration did not converge: "
                             "system not stabilizable or ill-conditioned")
    _check_dare_residual(A, B, Q, R, P)
    return P


def _check_dare_residual(A, B, Q, R, P) -> None:
    BtP = B.T @ P
    resid = P - (Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A))
    bound = RESIDUAL_TOL * (1.0 + np.linalg.norm(P))
    if np.linalg.norm(resid) > bound:
        raise SynthesisError(f"Riccati residual {np.linalg.norm(resid):.2e} exceeds {bound:.2e}")


def lqr_gain(A: np.ndarray, B: np.ndarray, R: np.ndarray, P: np.ndarray) -> np.ndarray:
    """K = -(R + B'PB)^-1 B'PA; the closed loop A + BK must be stable."""
    A, B, R, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, R, P))
    W = R + B.T @ P @ B
    try:
        K = -np.linalg.solve(W, B.T @ P @ A)
    except np.linalg.LinAlgError as exc:  # impossible for PD R; defensive
        raise SynthesisError("R + B'PB is singular") from exc
    rho = np.abs(np.linalg.eigvals(A + B @ K)).max()
    if rho > 1.0 - SPECTRAL_MARGIN:
        raise SynthesisError(f"closed loop not stable: spectral radius {rho}")
    return K


def solve_dlyap(A_K: np.ndarray, sigma_w: np.ndarray) -> np.ndarray:
    """Solution of S = A_K S A_K' + sigma_w by the doubling recurrence.

    Equals the limit of the covariance iteration V+ = A_K V A_K' + sigma_w,
    but converges quadratically (the propagator is squared each round).
    """
    M = np.atleast_2d(np.asarray(A_K, dtype=float)).copy()
    S = np.atleast_2d(np.asarray(sigma_w, dtype=float)).copy()
    for _ in range(128):
        incr = M @ S @ M.T
        S = S + incr
        S = 0.5 * (S + S.T)
        M = M @ M
        if np.abs(incr).max() <= _FP_TOL * (1.0 + np.abs(S).max()):
            break
    else:
        raise SynthesisError("Lyapunov doubling did not converge (closed loop unstable?)")
    resid = np.linalg.norm(np.atleast_2d(A_K) @ S @ np.atleast_2d(A_K).T - S + np.atleast_2d(sigma_w))
    bound = RESIDUAL_TOL * (1.0 + np.linalg.norm(S))
    if resid > bound:
        raise SynthesisError(f"Lyapunov residual {resid:.2e} exceeds {bound:.2e}")
    return S


def steady_state_cost(sigma_inf: np.ndarray, Q: np.ndarray, R: np.ndarray, K: np.ndarray) -> float:
    """Expected stationary stage cost tr(sigma_inf (Q + K'RK))."""
    Q, R, K = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Q, R, K))
    return float(np.trace(np.atleast_2d(sigma_inf) @ (Q + K.T @ R @ K)))


@dataclass(frozen=True)
class DesignArtifacts:
    """Everything the tightening and the controller need from the plant data."""

    K: np.ndarray           # prestabilizing LQR gain
    P: np.ndarray           # Riccati matrix (terminal / infinite-horizon cost)
    A_K: np.ndarray         # closed loop A + BK
    sigma_inf: np.ndarray   # steady-state error covariance
    ell_ss: float           # expected stationary stage cost
    input_cost: np.ndarray  # R + B'PB, the weight on v - Kz

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.A_K)).max())


def design(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
           sigma_w: np.ndarray) -> DesignArtifacts:
    """Run the full synthesis chain and assert every invariant it promises.

    The stationary-cost identity tr(sigma_inf (Q + K'RK)) = tr(P sigma_w)
    is asserted, not assumed: ell_ss is defined by the left expression.
    """
    A, B, Q, R, sigma_w = (np.atleast_2d(np.asarray(M, dtype=float))
                           for M in (A, B, Q, R, sigma_w))
    P = solve_dare(A, B, Q, R)
    K = lqr_gain(A, B, R, P)
    A_K = A + B @ K
    sigma_inf = solve_dlyap(A_K, sigma_w)
    ell = steady_state_cost(sigma_inf, Q, R, K)
    alt = float(np.trace(P @ sigma_w))
    if abs(ell - alt) > 1e-7 * (1.0 + abs(alt)):
        raise SynthesisError(
            f"stationary cost identity violated: tr(S(Q+K'RK))={ell!r} vs tr(P Sw)={alt!r}")
    return DesignArtifacts(K=K, P=P, A_K=A_K, sigma_inf=sigma_inf, ell_ss=ell,
                           input_cost=R + B.T @ P @ B)
