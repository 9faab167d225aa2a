"""Counter-based Gaussian sampling (numba).

Disturbances are indexed, not streamed: the normal vector for (master_seed,
run, step) is a pure function of those integers, so any worker can produce
any run's noise without coordination and the results are bit-identical for
every scheduling.  Uniform words come from a splitmix64-style keyed hash;
normals via Box-Muller.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def counter_word(master_seed, run_index, step_index, lane):
    """64-bit word keyed on (seed, run, step, lane); a bijective mix per field."""
    h = _mix(np.uint64(master_seed) + _GOLDEN)
    h = _mix(h ^ (np.uint64(run_index) + _GOLDEN))
    h = _mix(h ^ (np.uint64(step_index) + _GOLDEN))
    h = _mix(h ^ (np.uint64(lane) + _GOLDEN))
    return h


@njit(cache=True)
def standard_normals(master_seed, run_index, step_index, out):
    """Fill `out` with iid standard normals via Box-Muller.

    u1 is mapped into (0, 1] so the log never sees zero.
    """
    n = out.shape[0]
    npairs = (n + 1) // 2
    for p in range(npairs):
        w1 = counter_word(master_seed, run_index, step_index, 2 * p)
        w2 = counter_word(master_seed, run_index, step_index, 2 * p + 1)
        u1 = 1.0 - (w1 >> np.uint64(11)) * _INV_2_53
        u2 = (w2 >> np.uint64(11)) * _INV_2_53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out[2 * p] = rad * np.cos(ang)
        if 2 * p + 1 < n:
            out[2 * p + 1] = rad * np.sin(ang)


@njit(cache=True)
def normal_batch(master_seed, run_index, step0, out):
    """Fill out[i] with the normals of step step0 + i (batch of steps)."""
    for i in range(out.shape[0]):
        standard_normals(master_seed, run_index, step0 + i, out[i])


def psd_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L' = M for symmetric PSD M.

    Pivot columns with nonpositive diagonal are zeroed, which is exact for
    genuinely PSD matrices (e.g. a zero covariance) up to roundoff.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    L = np.zeros((n, n))
    tol = 1e-12 * max(1.0, float(np.abs(np.diag(M)).max()))
    for j in range(n):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        if d <= tol:
            continue
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (M[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L
