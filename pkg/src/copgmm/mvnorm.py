"""Multivariate normal cdf machinery.

Dispatch by dimension: d=1 closed form, d=2 Genz's bivariate quadrature,
d=3 a conditioning quadrature, d>=4 randomized quasi-Monte-Carlo with a
Richtmyer lattice, antithetic points and a fixed internal shift seed so
results are reproducible bit-for-bit.

Coordinates at +inf are marginalized out before integrating; any coordinate
at -inf gives 0.
"""
import math

import numpy as np
from scipy import special

from . import _kernels as _k
from .exceptions import NumericalError

MAX_DIM = 12
DEFAULT_QMC_SEED = 18181
_QMC_SHIFTS = 10
_QMC_MAX_POINTS = 1 << 18

_point_cache = {}


def default_tol(dim):
    """Integration tolerance: 1e-6 up to dimension 4, 5e-6 above."""
    return 1e-6 if dim <= 4 else 5e-6


def std_normal_cdf(z):
    return special.ndtr(z)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z) / _k.SQRT_TWOPI
    return out if out.ndim else float(out)


def std_normal_quantile(u):
    scalar = np.isscalar(u)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("std_normal_quantile requires u in (0, 1)")
    out = special.ndtri(u)
    return float(out) if scalar else out


def bvn_cdf(z1, z2, rho):
    """P(Z1 <= z1, Z2 <= z2) under correlation rho, |rho| <= 1."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError("bvn_cdf requires |rho| <= 1")
    return _k.bvn_cdf(float(z1), float(z2), float(rho))


def validate_corr(R, name="R"):
    """Check symmetry, unit diagonal and positive semi-definiteness."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(R, R.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-10):
        raise ValueError(f"{name} must have a unit diagonal")
    if np.any(np.abs(R) > 1.0 + 1e-10):
        raise ValueError(f"{name} has off-diagonal entries outside [-1, 1]")
    w = np.linalg.eigvalsh(R)
    if w[0] < -1e-10:
        raise ValueError(f"{name} is not positive semi-definite "
                         f"(min eigenvalue {w[0]:.3e})")
    return R


def chol_psd(A):
    """Cholesky factor tolerating a semi-definite A (zero pivots allowed)."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    L = np.zeros((d, d))
    for j in range(d):
        s = A[j, j] - np.dot(L[j, :j], L[j, :j])
        if s <= 1e-12:
            L[j, j] = 0.0
            continue
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, d):
            L[i, j] = (A[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


def _qmc_points(dim, npts, seed):
    """Scrambled Sobol point sets, one scramble per randomization; cached."""
    from scipy.stats import qmc

    key = (dim, npts, seed)
    if key not in _point_cache:
        pts = np.empty((_QMC_SHIFTS, npts, dim - 1))
        for s in range(_QMC_SHIFTS):
            g = qmc.Sobol(dim - 1, scramble=True, seed=seed + 7919 * s)
            pts[s] = g.random(npts)
        _point_cache[key] = pts
    return _point_cache[key]


def _qmc_base_points(d):
    # sized so the error estimate typically sits well under the default
    # tolerance: the point count then rarely adapts and the estimate stays a
    # smooth function of its inputs (finite differences of it are reliable)
    if d <= 5:
        return 16384
    return 8192


def _mvn_qmc(b, R, tol, seed):
    d = b.shape[0]
    # variable reordering: integrate the most restrictive coordinates first;
    # ordering by the limits alone keeps the estimate continuous under small
    # perturbations of R
    order = np.argsort(b)
    bp = np.ascontiguousarray(b[order])
    L = chol_psd(R[np.ix_(order, order)])
    npts = _qmc_base_points(d)
    while True:
        pts = _qmc_points(d, npts, seed)
        vals = _k._mvn_qmc_kernel(bp, L, pts)
        est = float(np.mean(vals))
        err = 3.0 * float(np.std(vals)) / math.sqrt(len(vals))
        if err <= tol:
            return min(max(est, 0.0), 1.0), err
        if npts >= _QMC_MAX_POINTS:
            raise NumericalError(
                f"mvn_cdf: tolerance {tol:g} unattainable in dimension {d} "
                f"(error estimate {err:g} at {npts} points)")
        npts *= 2


def _components(R):
    """Connected components of the nonzero-correlation graph.

    Exactly-zero blocks arise from temporal-independence association
    matrices; factorizing over them makes those cases exact."""
    d = R.shape[0]
    seen = np.zeros(d, dtype=bool)
    comps = []
    for start in range(d):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in range(d):
                if not seen[j] and R[i, j] != 0.0:
                    seen[j] = True
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def mvn_cdf(x, R, tol=None, seed=DEFAULT_QMC_SEED, validate=True):
    """P(Z <= x) for Z ~ N(0, R); returns ``(estimate, error_bound)``.

    ``x`` may contain +inf entries (those coordinates are dropped); any -inf
    entry yields probability zero.  The error bound is three standard errors
    for the QMC path and an internal comparison estimate for the quadrature
    paths.  Deterministic given ``seed``.
    """
    x = np.asarray(x, dtype=float)
    R = np.asarray(R, dtype=float)
    if x.ndim != 1 or R.shape != (x.size, x.size):
        raise ValueError("mvn_cdf: x must be a vector matching R")
    if x.size > MAX_DIM:
        raise ValueError(f"mvn_cdf supports dimension <= {MAX_DIM}")
    if validate:
        validate_corr(R)
    if np.any(np.isneginf(x)):
        return 0.0, 0.0
    keep = ~np.isposinf(x)
    x = x[keep]
    R = R[np.ix_(keep, keep)]
    d = x.size
    if tol is None:
        tol = default_tol(d)
    if d == 0:
        return 1.0, 0.0
    if d == 1:
        return float(special.ndtr(x[0])), 0.0
    comps = _components(R)
    if len(comps) > 1:
        val = 1.0
        err = 0.0
        for idx in comps:
            v, e = mvn_cdf(x[idx], R[np.ix_(idx, idx)], tol=tol, seed=seed,
                           validate=False)
            err = err * v + e * val  # first-order error propagation
            val *= v
        return val, err
    if d == 2:
        return _k.bvn_cdf(x[0], x[1], R[0, 1]), 5e-16
    if d == 3:
        val, err = _k.tvn_cdf_with_error(x[0], x[1], x[2],
                                         R[0, 1], R[0, 2], R[1, 2])
        return min(max(val, 0.0), 1.0), max(err, 1e-15)
    if d == 4:
        val, err = _k.qvn_cdf_with_error(x, R)
        return val, max(err, 1e-15)
    return _mvn_qmc(x, R, tol, seed)
