"""Halfspace polytope calculus: tightening and invariant terminal sets.

Polytopes are kept in H-representation {x : Hx <= h} throughout; that is
what both the tightening rule and the condensed QP consume.  The Pontryagin
difference with an ellipsoid is exact per halfspace (support function).

All LP-based set queries (redundancy, invariance certificates, emptiness)
are evaluated inside a fixed working box |x_i| <= WORKING_BOX.  For bounded
sets this changes nothing.  For unbounded ones it is load-bearing: the
maximal invariant set inside an unbounded constraint set need not have a
finite facet description at all (propagated facets keep rotating toward
the dominant eigenvector and never become redundant), so the pre-set
iteration below computes the invariant set of the boxed problem, which is
finitely determined, terminates, and is what standard invariant-set
toolboxes return in practice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qpsolve
from .errors import SolverFailure, TighteningInfeasibleError
from .uncertainty import Ellipsoid

__all__ = [
    "Polytope",
    "pontryagin_diff",
    "mpi_terminal_set",
    "is_redundant",
    "contains",
    "is_empty",
    "certify_invariant",
    "certify_subset",
]

CONTAIN_TOL = 1e-9
REDUNDANCY_TOL = 1e-9
WORKING_BOX = 1e6
_LP_TOL = 1e-11
_MPI_MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class Polytope:
    """{x : Hx <= h} with outward facet normals as rows of H."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape[0] != h.size:
            raise ValueError("row count of H must match length of h")
        if H.shape[0] == 0:
            raise ValueError("polytope needs at least one halfspace")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("polytope data must be finite")
        if np.any(np.abs(H).max(axis=1) == 0.0):
            raise ValueError("every row of H must be nonzero")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def nrows(self) -> int:
        return self.H.shape[0]

    def unit_normalized(self) -> "Polytope":
        """Rows scaled to unit Euclidean facet normals."""
        norms = np.linalg.norm(self.H, axis=1)
        return Polytope(self.H / norms[:, None], self.h / norms)

    def leading_normalized(self) -> "Polytope":
        """Rows scaled so the leading (largest-magnitude) coefficient is 1.

        The scale-free form used for report output and table comparisons.
        """
        lead = np.abs(self.H).max(axis=1)
        return Polytope(self.H / lead[:, None], self.h / lead)


def contains(P: Polytope, x: np.ndarray, tol: float = CONTAIN_TOL) -> bool:
    """Membership with a small outward slack on every facet."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != P.dim:
        raise ValueError(f"point dimension {x.size} != polytope dimension {P.dim}")
    return bool(np.all(P.H @ x <= P.h + tol))


def pontryagin_diff(P: Polytope, E: Ellipsoid) -> Polytope:
    """P shrunk by the ellipsoid: subtract E's support value from each offset.

    Exact for halfspaces: {x : a'x <= b} minus E is {x : a'x <= b - h_E(a)}.
    Raises when a tightened facet excludes the origin, which means the
    chance-constraint budget cannot be met by this tube.
    """
    if E.dim != P.dim:
        raise ValueError(f"ellipsoid dimension {E.dim} != polytope dimension {P.dim}")
    support = np.sqrt(E.level * np.einsum("ij,jk,ik->i", P.H, E.shape, P.H))
    new_h = P.h - support
    bad = np.nonzero(new_h < 0.0)[0]
    if bad.size:
        rows = ", ".join(str(j) for j in bad)
        raise TighteningInfeasibleError(f"tightening infeasible: constraint {rows}")
    return Polytope(P.H, new_h)


def _max_over(P: Polytope, a: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """max a'x over P within the working box; flags a box-active maximizer."""
    n = P.dim
    G = np.vstack([P.H, np.eye(n), -np.eye(n)])
    hv = np.concatenate([P.h, np.full(2 * n, WORKING_BOX)])
    lp = qpsolve.QpProblem(np.zeros((n, n)), -a, ineq=(G, hv))
    sol = qpsolve.solve(lp, tol=_LP_TOL)
    if sol.status != "optimal":
        raise SolverFailure(f"set-query LP did not converge (status={sol.status})")
    val = float(a @ sol.x)
    # redundancy decisions need the optimal value itself to be accurate, so a
    # loosely-accepted (stalled) solve must fail loudly rather than decide
    if sol.kkt["complementarity"] > 1e-7 * (1.0 + abs(val)):
        raise SolverFailure("set-query LP optimum too inaccurate "
                            f"(complementarity {sol.kkt['complementarity']:.2e})")
    box_active = bool(np.abs(sol.x).max() >= WORKING_BOX * (1.0 - 1e-4))
    return val, sol.x, box_active


def _boxed_redundant(a: np.ndarray, b: float, P: Polytope) -> bool:
    """Redundancy within the working box (no unboundedness veto)."""
    if np.abs(a).max() == 0.0:
        return b >= 0.0
    val, _, _ = _max_over(P, a)
    return val <= b + REDUNDANCY_TOL * (1.0 + abs(b))


def is_redundant(row: tuple[np.ndarray, float], P: Polytope) -> bool:
    """True iff max_{x in P} a'x <= b (+tolerance); decided by LP.

    A box-active maximizer means the supremum may grow past the working
    box (P unbounded in direction a), so the row is reported non-redundant.
    """
    a = np.asarray(row[0], dtype=float).ravel()
    b = float(row[1])
    if a.size != P.dim:
        raise ValueError("row dimension mismatch")
    if np.abs(a).max() == 0.0:
        return b >= 0.0
    val, _, box_active = _max_over(P, a)
    if box_active:
        return False
    return val <= b + REDUNDANCY_TOL * (1.0 + abs(b))


def is_empty(P: Polytope) -> bool:
    """Phase-1 emptiness certificate (minimum total slack > 0)."""
    return not qpsolve.check_feasible(ineq=(P.H, P.h)).feasible


def certify_subset(inner: Polytope, outer: Polytope) -> bool:
    """LP certificate that inner is contained in outer (within the box).

    Each facet of `outer` must be redundant with respect to `inner`.
    """
    return all(_boxed_redundant(a, b, inner) for a, b in zip(outer.H, outer.h))


def certify_invariant(A_K: np.ndarray, P: Polytope) -> bool:
    """LP certificate that A_K P is contained in P (within the box)."""
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    return all(_boxed_redundant(a, b, P) for a, b in zip(P.H @ A_K, P.h))


def _minimal_rows(H: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop rows redundant with respect to the remaining ones (fixed order)."""
    keep = list(range(H.shape[0]))
    i = 0
    while i < len(keep):
        others = [j for j in keep if j != keep[i]]
        if not others:
            break
        P = Polytope(H[others], h[others])
        if _boxed_redundant(H[keep[i]], h[keep[i]], P):
            keep.pop(i)
        else:
            i += 1
    return H[keep], h[keep]


def mpi_terminal_set(A_K: np.ndarray, Z: Polytope, KV: Polytope | None = None) -> Polytope:
    """Maximal positively invariant polytope inside Z (and KV) for z+ = A_K z.

    Pre-set intersection iteration: propagate the newest facets through A_K,
    keep those not already implied, stop when nothing new appears.  Queries
    run inside the working box, which guarantees finite determination even
    when Z is unbounded (see module docstring); the returned facet list
    contains only propagated constraint facets, never the box itself.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    if KV is not None:
        H = np.vstack([Z.H, KV.H])
        h = np.concatenate([Z.h, KV.h])
    else:
        H, h = Z.H.copy(), Z.h.copy()
    if np.any(h <= 0.0):
        raise ValueError("constraint sets must contain the origin strictly")
    if is_empty(Polytope(H, h)):
        raise TighteningInfeasibleError("terminal set seed Z (and KV) is empty")

    frontier_H, frontier_h = H.copy(), h.copy()
    for _ in range(_MPI_MAX_ROUNDS):
        cand_H = frontier_H @ A_K
        cand_h = frontier_h
        new_H, new_h = [], []
        current = Polytope(H, h)
        for a, b in zip(cand_H, cand_h):
            if np.abs(a).max() == 0.0:
                continue
            if not _boxed_redundant(a, b, current):
                new_H.append(a)
                new_h.append(b)
        if not new_H:
            Hm, hm = _minimal_rows(H, h)
            return Polytope(Hm, hm)
        frontier_H = np.array(new_H)
        frontier_h = np.array(new_h)
        H = np.vstack([H, frontier_H])
        h = np.concatenate([h, frontier_h])
    raise SolverFailure(f"invariant-set iteration exceeded {_MPI_MAX_ROUNDS} rounds")
