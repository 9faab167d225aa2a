"""Compiled closed-loop simulation kernel (numba).

One function simulates one run of T steps for any controller variant,
using precomputed condensed-QP matrices.  It mirrors the per-step math of
controller.Controller exactly (an equivalence test pins the two paths
together); it exists because the Monte Carlo campaigns solve tens of
millions of small QPs and cannot afford Python-object overhead per step.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ._ipm import CONVERGED, ipm_qp, phase1_lp
from ._rng import standard_normals

VARIANT_LQR = 0
VARIANT_FREE_XI = 1   # ic and lxi (they differ only in the xi penalty)
VARIANT_BAK = 2

ERR_NONE = -1
ERR_SOLVER = 1
ERR_BACKUP_INFEASIBLE = 2

_FEAS_TOL = 1e-8


@njit(cache=True)
def simulate_run_kernel(variant, xi_penalty, x0, T, master_seed, run_index,
                        A, B, K, Lw,
                        Hvv, CW, Wbar, Kstack, Gv, GxA, h0,
                        Qx, Ru, ell_ss,
                        ipm_tol, ipm_max_iter,
                        x_out, u_out, xi_out):
    """Simulate one closed-loop run; returns (cost, backup_events, err_kind, err_step).

    x_out[k], u_out[k], xi_out[k] hold the realized trajectory for
    k = 0..T-1 (xi is NaN for lqr).  cost accumulates the stage cost
    x'Qx x + u'Ru u - ell_ss over those steps.
    """
    nx = A.shape[0]
    nu = B.shape[1]
    nv = Gv.shape[1]
    m0 = Gv.shape[0]

    x = x0.copy()
    z1 = x0.copy()
    noise = np.empty(nx)
    cost = 0.0
    backup_events = 0

    # scratch for the free-xi QP
    Hfull = np.empty((nv + 1, nv + 1))
    gfull = np.empty(nv + 1)
    Gfull = np.zeros((m0 + 2, nv + 1))
    hfull = np.empty(m0 + 2)
    if variant == VARIANT_FREE_XI:
        for i in range(m0):
            for j in range(nv):
                Gfull[i, j] = Gv[i, j]
        Gfull[m0, nv] = 1.0
        Gfull[m0 + 1, nv] = -1.0

    for k in range(T):
        x_out[k] = x
        if variant == VARIANT_LQR:
            u = K @ x
            xi_out[k] = np.nan
        elif variant == VARIANT_FREE_XI:
            d = z1 - x
            q = Kstack @ x
            r = Kstack @ d
            Wr = Wbar @ r
            hv = -(CW @ r)
            for i in range(nv):
                for j in range(nv):
                    Hfull[i, j] = Hvv[i, j]
                Hfull[i, nv] = hv[i]
                Hfull[nv, i] = hv[i]
            Hfull[nv, nv] = 2.0 * (np.dot(r, Wr) + 1e-10)
            gv = -(CW @ q)
            for i in range(nv):
                gfull[i] = gv[i]
            gfull[nv] = 2.0 * np.dot(q, Wr) + xi_penalty
            gxd = GxA @ d
            gxx = GxA @ x
            for i in range(m0):
                Gfull[i, nv] = gxd[i]
                hfull[i] = h0[i] - gxx[i]
            hfull[m0] = 1.0
            hfull[m0 + 1] = 0.0
            xs, lam, s, st, it = ipm_qp(Hfull, gfull, Gfull, hfull, ipm_tol, ipm_max_iter)
            if st != CONVERGED:
                return cost, backup_events, ERR_SOLVER, k
            xi = xs[nv]
            z0 = x + xi * d
            v0 = xs[:nu]
            u = v0 + K @ (x - z0)
            z1 = A @ z0 + B @ v0
            xi_out[k] = xi
        else:  # VARIANT_BAK
            rhs = h0 - GxA @ x
            p1, wit, st1 = phase1_lp(Gv, rhs, ipm_tol, ipm_max_iter)
            if st1 != CONVERGED:
                return cost, backup_events, ERR_SOLVER, k
            if p1 <= _FEAS_TOL:
                z0 = x
                xi = 0.0
            else:
                z0 = z1
                xi = 1.0
                backup_events += 1
                rhs = h0 - GxA @ z0
            g = -(CW @ (Kstack @ z0))
            xs, lam, s, st, it = ipm_qp(Hvv, g, Gv, rhs, ipm_tol, ipm_max_iter)
            if st != CONVERGED:
                if xi == 1.0:
                    return cost, backup_events, ERR_BACKUP_INFEASIBLE, k
                return cost, backup_events, ERR_SOLVER, k
            v0 = xs[:nu]
            u = v0 + K @ (x - z0)
            z1 = A @ z0 + B @ v0
            xi_out[k] = xi

        u_out[k] = u
        cost += np.dot(x, Qx @ x) + np.dot(u, Ru @ u) - ell_ss
        standard_normals(master_seed, run_index, k, noise)
        x = A @ x + B @ u + Lw @ noise

    return cost, backup_events, ERR_NONE, -1
