"""Dense primal-dual interior-point kernels (numba).

Solves min 0.5 x'Hx + g'x s.t. Gx <= h with a Mehrotra predictor-corrector
iteration on the primal normal equations.  Problems here are tiny (tens of
variables and rows), so each Newton system is formed densely and factored
with an unblocked Cholesky; an escalating diagonal shift covers the
semidefinite case (LP mode has H = 0).

The iteration polishes toward `tol` but keeps the best iterate seen (by
scaled KKT merit) and accepts it at `ACCEPT_TOL` if the target proves
numerically unreachable; near-degenerate active sets otherwise fall off a
conditioning cliff one iteration after they are already good enough.

Everything in this module must stay deterministic: fixed iteration logic,
no threading, no fastmath.  The closed-loop Monte Carlo campaigns rely on
bit-identical solves for a given problem.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# status codes shared with qpsolve
CONVERGED = 0
MAX_ITER = 2
DIVERGED = 3

ACCEPT_TOL = 1e-8
_W_CAP = 1e14


@njit(cache=True)
def _chol_factor(M):
    """In-place lower Cholesky of M; returns False on a nonpositive pivot."""
    n = M.shape[0]
    for j in range(n):
        d = M[j, j]
        for k in range(j):
            d -= M[j, k] * M[j, k]
        if d <= 0.0 or not np.isfinite(d):
            return False
        d = np.sqrt(d)
        M[j, j] = d
        inv = 1.0 / d
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= M[i, k] * M[j, k]
            M[i, j] = s * inv
    return True


@njit(cache=True)
def _chol_solve(L, b, out):
    """Solve L L' out = b with L lower triangular."""
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def _solve_normal(M, rhs, out, scratch):
    """Solve M out = rhs for symmetric M, shifting the diagonal if needed."""
    n = M.shape[0]
    base = 0.0
    for i in range(n):
        base += abs(M[i, i])
    if not np.isfinite(base):
        return False
    base = 1e-14 * (1.0 + base / n)
    shift = 0.0
    for _ in range(10):
        for i in range(n):
            for j in range(n):
                scratch[i, j] = M[i, j]
            scratch[i, i] += shift
        if _chol_factor(scratch):
            _chol_solve(scratch, rhs, out)
            ok = True
            for i in range(n):
                if not np.isfinite(out[i]):
                    ok = False
            if ok:
                return True
        shift = base if shift == 0.0 else shift * 100.0
    return False


@njit(cache=True)
def ipm_qp(H, g, G, h, tol, max_iter):
    """Mehrotra predictor-corrector for min 0.5 x'Hx + g'x s.t. Gx <= h.

    Returns (x, lam, s, status, iterations) with the best iterate seen.
    CONVERGED means the scaled primal/dual/complementarity residuals are
    all below ACCEPT_TOL (usually well below: the loop only stops early
    at `tol`).  Infeasibility is NOT detected here; callers run phase-1.
    """
    m, n = G.shape
    x = np.zeros(n)
    scratch = np.empty((n, n))
    out = np.empty(n)

    if m == 0:
        rhs = -g
        if _solve_normal(H, rhs, out, scratch):
            return out.copy(), np.zeros(0), np.zeros(0), CONVERGED, 1
        return x, np.zeros(0), np.zeros(0), DIVERGED, 1

    # row equilibration: rows with tiny coefficients otherwise create
    # degenerate complementarity pairs that stall the iteration
    rn = np.empty(m)
    Gs = np.empty_like(G)
    hs = np.empty(m)
    for i in range(m):
        nrm = 0.0
        for j in range(n):
            if abs(G[i, j]) > nrm:
                nrm = abs(G[i, j])
        rn[i] = nrm if nrm > 0.0 else 1.0
        inv = 1.0 / rn[i]
        for j in range(n):
            Gs[i, j] = G[i, j] * inv
        hs[i] = h[i] * inv
    G = Gs
    h = hs

    s = np.empty(m)
    lam = np.ones(m)
    slack0 = h - G @ x
    for i in range(m):
        s[i] = slack0[i] + 1.0 if slack0[i] > 0.0 else 1.0

    # residuals are judged against separate primal/dual/objective scales so
    # that one large offset (e.g. working-box rows) cannot loosen the others
    sd = 1.0
    for i in range(n):
        if abs(g[i]) > sd:
            sd = abs(g[i])
    sd += 1.0
    sp = 1.0
    for i in range(m):
        if abs(h[i]) > sp:
            sp = abs(h[i])
    sp += 1.0
    # overall problem scale; stalled iterates are accepted against this
    # (matching the solution contract) rather than the tight target
    ps = max(sd, sp)
    for a in range(n):
        for b in range(n):
            if abs(H[a, b]) > ps:
                ps = abs(H[a, b])

    best_x = x.copy()
    best_lam = lam.copy()
    best_s = s.copy()
    best_merit = np.inf
    best_accept = np.inf
    stall = 0

    M = np.empty((n, n))
    rhs = np.empty(n)
    it = 0
    broke_down = False
    for it in range(1, max_iter + 1):
        rd = H @ x + g + G.T @ lam
        rp = G @ x + s - h
        mu = np.dot(s, lam) / m
        obj = 0.5 * np.dot(x, H @ x) + np.dot(g, x)
        sm = 1.0 + abs(obj)

        rd_max = 0.0
        for i in range(n):
            if abs(rd[i]) > rd_max:
                rd_max = abs(rd[i])
        rp_max = 0.0
        for i in range(m):
            if abs(rp[i]) > rp_max:
                rp_max = abs(rp[i])
        merit = max(rd_max / sd, rp_max / sp, mu / sm)
        accept_merit = max(rd_max, rp_max, mu) / ps
        if np.isfinite(merit) and merit < 0.9 * best_merit:
            stall = 0
        else:
            stall += 1
        if np.isfinite(merit) and merit < best_merit:
            best_merit = merit
            for i in range(n):
                best_x[i] = x[i]
            for i in range(m):
                best_lam[i] = lam[i]
                best_s[i] = s[i]
            best_accept = accept_merit
        if merit <= tol:
            break
        if stall >= 15:  # numerically stuck; the best iterate decides
            break
        if not np.isfinite(merit) or mu > 1e18 * (sp + sd):
            broke_down = True
            break
        if merit > 1e6 * best_merit:  # left the useful region entirely
            break

        W = np.empty(m)
        for i in range(m):
            w = lam[i] / s[i]
            if not np.isfinite(w) or w > _W_CAP:
                w = _W_CAP
            W[i] = w
        for a in range(n):
            for b in range(n):
                M[a, b] = H[a, b]
        for i in range(m):
            wi = W[i]
            for a in range(n):
                gia = G[i, a] * wi
                for b in range(n):
                    M[a, b] += gia * G[i, b]

        # affine (predictor) direction
        base = G.T @ lam - G.T @ (W * rp)
        for a in range(n):
            rhs[a] = -rd[a] + base[a]
        if not _solve_normal(M, rhs, out, scratch):
            broke_down = True
            break
        dx = out.copy()
        ds = -rp - G @ dx
        dlam = -lam - W * ds

        ap = 1.0
        ad = 1.0
        for i in range(m):
            if ds[i] < 0.0:
                r = -s[i] / ds[i]
                if r < ap:
                    ap = r
            if dlam[i] < 0.0:
                r = -lam[i] / dlam[i]
                if r < ad:
                    ad = r
        mu_aff = np.dot(s + ap * ds, lam + ad * dlam) / m
        sigma = 0.0
        if mu > 0.0:
            ratio = mu_aff / mu
            if ratio > 0.0:
                sigma = ratio * ratio * ratio

        # corrector direction with centering
        corr = sigma * mu - ds * dlam
        base2 = G.T @ (corr / s)
        for a in range(n):
            rhs[a] = -rd[a] + base[a] - base2[a]
        if not _solve_normal(M, rhs, out, scratch):
            broke_down = True
            break
        dx = out.copy()
        ds = -rp - G @ dx
        dlam = (-s * lam + corr - lam * ds) / s

        ap = 1.0
        ad = 1.0
        for i in range(m):
            if ds[i] < 0.0:
                r = -0.995 * s[i] / ds[i]
                if r < ap:
                    ap = r
            if dlam[i] < 0.0:
                r = -0.995 * lam[i] / dlam[i]
                if r < ad:
                    ad = r
        alpha = ap if ap < ad else ad
        for a in range(n):
            x[a] += alpha * dx[a]
        for i in range(m):
            s[i] += alpha * ds[i]
            lam[i] += alpha * dlam[i]

    if best_merit <= tol or best_accept <= ACCEPT_TOL:
        status = CONVERGED
    elif broke_down:
        status = DIVERGED
    else:
        status = MAX_ITER
    # translate multipliers/slacks back to the caller's row scaling
    for i in range(m):
        best_lam[i] = best_lam[i] / rn[i]
        best_s[i] = best_s[i] * rn[i]
    return best_x, best_lam, best_s, status, it


@njit(cache=True)
def phase1_lp(G, h, tol, max_iter):
    """Minimum total slack of Gx <= h: min sum(s) s.t. Gx - s <= h, s >= 0.

    Returns (optimum, witness, status).  The constraint system is feasible
    iff the optimum is (numerically) zero; the witness is the x part of the
    phase-1 solution.
    """
    m, n = G.shape
    if m == 0:
        return 0.0, np.zeros(n), CONVERGED
    nt = n + m
    Ht = np.zeros((nt, nt))
    gt = np.zeros(nt)
    for i in range(m):
        gt[n + i] = 1.0
    Gt = np.zeros((2 * m, nt))
    ht = np.empty(2 * m)
    for i in range(m):
        for j in range(n):
            Gt[i, j] = G[i, j]
        Gt[i, n + i] = -1.0
        ht[i] = h[i]
        Gt[m + i, n + i] = -1.0
        ht[m + i] = 0.0
    xs, lam, s, status, it = ipm_qp(Ht, gt, Gt, ht, tol, max_iter)
    obj = 0.0
    for i in range(m):
        si = xs[n + i]
        if si > 0.0:
            obj += si
    return obj, xs[:n].copy(), status
