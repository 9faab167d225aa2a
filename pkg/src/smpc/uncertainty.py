"""Probabilistic reachable sets for the prestabilized error process.

The error e(k+1) = A_K e(k) + w(k) started at zero has steady-state
covariance sigma_inf; an ellipsoid shaped by sigma_inf contains e(k) with
probability >= p at every step when the radius-squared `level` is chosen
from a concentration bound: the chi-squared quantile for Gaussian noise,
or the distribution-free Chebyshev level n/(1-p) otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularCovarianceError

__all__ = [
    "Ellipsoid",
    "chebyshev_level",
    "chi2_quantile",
    "state_prs",
    "input_prs",
    "empirical_coverage",
]

_PD_TOL = 1e-12


def _check_probability(p: float) -> None:
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability level must lie in (0, 1), got {p}")


def _regularized_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion for x < a + 1, Lentz continued fraction otherwise;
    both converge to ~1e-15 for the a = n/2 values used here.
    """
    if x < 0.0 or a <= 0.0:
        raise ValueError("require x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        # power series for the lower function
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(500):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # modified Lentz continued fraction for the upper function Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - lg) * f
    return 1.0 - q


def chebyshev_level(n: int, p: float) -> float:
    """Distribution-free radius-squared n/(1-p) for an n-dimensional ellipsoid."""
    _check_probability(p)
    if n < 1:
        raise ValueError("dimension must be >= 1")
    return n / (1.0 - p)


def chi2_quantile(n: int, p: float) -> float:
    """Quantile of the chi-squared distribution with n degrees of freedom.

    Returns t with P(n/2, t/2) = p, found by bisection; the bracket
    [0, n + 40*sqrt(n)] covers every practical probability level and is
    widened automatically otherwise.  Absolute tolerance ~1e-13.
    """
    _check_probability(p)
    if n < 1:
        raise ValueError("degrees of freedom must be >= 1")
    a = 0.5 * n
    lo, hi = 0.0, n + 40.0 * math.sqrt(n)
    while _regularized_lower_gamma(a, 0.5 * hi) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _regularized_lower_gamma(a, 0.5 * mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * (1.0 + hi):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Ellipsoid:
    """Origin-centered set {x : x' inv(shape) x <= level} with `shape` PD."""

    shape: np.ndarray
    level: float
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if shape.shape[0] != shape.shape[1]:
            raise ValueError("shape matrix must be square")
        if not np.all(np.isfinite(shape)):
            raise ValueError("shape matrix must be finite")
        sym_err = np.abs(shape - shape.T).max()
        if sym_err > _PD_TOL * (1.0 + np.abs(shape).max()):
            raise ValueError("shape matrix must be symmetric")
        shape = 0.5 * (shape + shape.T)
        eigs = np.linalg.eigvalsh(shape)
        if eigs.min() <= _PD_TOL * max(1.0, eigs.max()):
            raise SingularCovarianceError(
                "ellipsoid shape matrix is singular; reduce to the constraint "
                "subspace before building a reachable set"
            )
        if not self.level > 0.0:
            raise ValueError("level must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "_chol", np.linalg.cholesky(shape))

    @property
    def dim(self) -> int:
        return self.shape.shape[0]

    def support(self, direction: np.ndarray) -> float:
        """Support function max_{x in E} direction' x = sqrt(level * a' shape a)."""
        a = np.asarray(direction, dtype=float)
        return math.sqrt(self.level * float(a @ self.shape @ a))

    def support_point(self, direction: np.ndarray) -> np.ndarray:
        """Boundary point attaining the support value in `direction`."""
        a = np.asarray(direction, dtype=float)
        sa = self.shape @ a
        return sa * math.sqrt(self.level / float(a @ sa))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership for one point (n,) or a batch (m, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        y = np.linalg.solve(self._chol, pts.T)
        inside = np.einsum("ij,ij->j", y, y) <= self.level
        return inside if np.ndim(points) > 1 else bool(inside[0])


def state_prs(sigma_inf: np.ndarray, p_x: float, gaussian: bool) -> Ellipsoid:
    """Reachable set for the state error, shaped by the steady-state covariance."""
    _check_probability(p_x)
    sigma_inf = np.atleast_2d(np.asarray(sigma_inf, dtype=float))
    n = sigma_inf.shape[0]
    level = chi2_quantile(n, p_x) if gaussian else chebyshev_level(n, p_x)
    return Ellipsoid(sigma_inf, level)


def input_prs(K: np.ndarray, sigma_inf: np.ndarray, p_u: float, gaussian: bool) -> Ellipsoid:
    """Reachable set for the input error K e, built from its own covariance.

    Pushing the covariance through K (variance K sigma_inf K') is much less
    conservative than mapping the state set through K.
    """
    _check_probability(p_u)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    sigma_u = K @ np.atleast_2d(np.asarray(sigma_inf, dtype=float)) @ K.T
    sigma_u = 0.5 * (sigma_u + sigma_u.T)
    level = chi2_quantile(K.shape[0], p_u) if gaussian else chebyshev_level(K.shape[0], p_u)
    return Ellipsoid(sigma_u, level)


def empirical_coverage(ellipsoid: Ellipsoid, samples: np.ndarray) -> float:
    """Fraction of sample points inside the ellipsoid."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    return float(np.count_nonzero(ellipsoid.contains(samples))) / samples.shape[0]
