"""Generalized method of moments core.

Stacked mean-zero score vectors g_i per subject; the one-step GMM estimator
minimizes gbar' W gbar with the plug-in weight W = [n^{-1} sum g_i g_i']^{-1}
evaluated at a consistent starting estimate.  Asymptotic covariance is
n^{-1} (G' W G)^{-1} with G the numerical moment Jacobian, and the
overidentification J statistic n gbar' W gbar is chi-square with
(moments - parameters) degrees of freedom.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .exceptions import NumericalError

logger = logging.getLogger("copgmm")


@dataclass
class GmmResult:
    theta: np.ndarray
    cov: np.ndarray
    J: float
    df: int
    iterations: int
    converged: bool
    n_obs: int
    n_moments: int
    theta_labels: tuple = ()
    weight_ridge: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self):
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


_WEIGHT_EIG_FLOOR = 1e-4


def regularize_score_variance(G):
    """Plug-in variance of the stacked scores, spectrally regularized.

    Structurally collinear or empty score cells leave near-zero eigenvalues;
    those are lifted to a relative floor before inversion (logged), which
    keeps degenerate directions from receiving arbitrarily large GMM weight.
    Returns (V_regularized, applied_epsilon).
    """
    n, q = G.shape
    V = G.T @ G / n
    w, Q = np.linalg.eigh(V)
    wmax = float(w.max())
    if wmax <= 0.0:
        raise NumericalError("score variance matrix is zero")
    floor = _WEIGHT_EIG_FLOOR * wmax
    n_floored = int(np.sum(w < floor))
    ridge = floor if n_floored else 0.0
    if n_floored:
        logger.warning("weight matrix ridge-regularized: %d of %d "
                       "eigenvalues lifted to eps=%.2e", n_floored, q, floor)
    w_reg = np.maximum(w, floor)
    V_reg = (Q * w_reg) @ Q.T
    return 0.5 * (V_reg + V_reg.T), ridge


def weight_from_subject_moments(G):
    """Inverse of the regularized plug-in score variance (the GMM weight)."""
    V_reg, ridge = regularize_score_variance(G)
    W = np.linalg.inv(V_reg)
    return 0.5 * (W + W.T), ridge


def central_diff_jacobian(fun, theta, h=1e-6):
    """Central-difference Jacobian of a vector function of theta."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for l in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[l] += h
        tm[l] -= h
        cols.append((np.asarray(fun(tp)) - np.asarray(fun(tm))) / (2.0 * h))
    return np.column_stack(cols)


def _fisher_z(rho):
    return np.arctanh(np.clip(rho, -0.999999, 0.999999))


def _inv_fisher_z(z):
    return np.tanh(z)


def gmm_minimize(mean_moment_fn, subject_moment_fn, theta_init, n,
                 theta_labels=(), psd_check=None, gtol=1e-9):
    """One-step GMM: weight fixed at theta_init, quasi-Newton minimization
    of the quadratic form over Fisher-z transformed correlations."""
    theta_init = np.asarray(theta_init, dtype=float)
    G_i = subject_moment_fn(theta_init)
    n_eff, q = G_i.shape
    if n_eff != n:
        raise ValueError("subject moment matrix has the wrong row count")
    W, ridge = weight_from_subject_moments(G_i)

    bad_value = 1e12

    def theta_of(zv):
        return _inv_fisher_z(zv)

    def objective(zv):
        th = theta_of(zv)
        if psd_check is not None and not psd_check(th):
            return bad_value * (1.0 + float(np.sum(zv * zv)))
        gbar = mean_moment_fn(th)
        return float(gbar @ W @ gbar)

    def gradient(zv):
        # central differences in z-space, h matched to the rho-space step
        h = 1e-6
        g = np.empty(zv.size)
        for l in range(zv.size):
            zp = zv.copy()
            zm = zv.copy()
            zp[l] += h
            zm[l] -= h
            g[l] = (objective(zp) - objective(zm)) / (2.0 * h)
        return g

    z0 = _fisher_z(theta_init)
    # keep the search local to the consistent starting value: under weak
    # identification the estimated weight is noisy and an unbounded
    # quasi-Newton run can leave the region where the moments carry signal
    bounds = [(z - 1.0, z + 1.0) for z in z0]
    res = optimize.minimize(objective, z0, jac=gradient, method="L-BFGS-B",
                            bounds=bounds,
                            options={"gtol": gtol, "ftol": 1e-15,
                                     "maxiter": 200})
    at_bound = any(abs(res.x[i] - b[0]) < 1e-9 or abs(res.x[i] - b[1]) < 1e-9
                   for i, b in enumerate(bounds))
    theta_hat = theta_of(res.x)
    gbar = mean_moment_fn(theta_hat)
    Gmat = central_diff_jacobian(mean_moment_fn, theta_hat)
    GWG = Gmat.T @ W @ Gmat
    try:
        cov = np.linalg.inv(GWG) / n
    except np.linalg.LinAlgError:
        raise NumericalError("GMM curvature matrix singular at the optimum")
    cov = 0.5 * (cov + cov.T)
    J = float(n * gbar @ W @ gbar)
    df = q - theta_hat.size
    converged = bool((res.success or np.max(np.abs(res.jac)) < 1e-5)
                     and not at_bound
                     and np.all(np.diag(cov) >= 0.0)
                     and np.linalg.cond(GWG) < 1e12)
    if not converged:
        logger.warning("GMM optimizer did not report convergence: %s",
                       res.message)
    return GmmResult(theta=theta_hat, cov=cov, J=J, df=df,
                     iterations=int(res.nit), converged=converged,
                     n_obs=n, n_moments=q, theta_labels=tuple(theta_labels),
                     weight_ridge=ridge,
                     diagnostics={"objective": float(res.fun),
                                  "grad_norm": float(np.max(np.abs(res.jac)))})


def pairwise_sandwich_cov(mean_moment_fn, subject_moment_fn, theta, B, n):
    """Asymptotic covariance of the summed-score (pairwise) estimator:
    n^{-1} (G' B' (B V B')^{-1} B G)^{-1}.

    Uses the same spectrally regularized V as the GMM weight, so the
    pairwise-vs-GMM efficiency ordering holds exactly as a matrix identity.
    """
    theta = np.asarray(theta, dtype=float)
    G_i = subject_moment_fn(theta)
    V, _ = regularize_score_variance(G_i)
    Gmat = central_diff_jacobian(mean_moment_fn, theta)
    BG = B @ Gmat
    BVB = B @ V @ B.T
    middle = np.linalg.solve(BVB, BG)
    cov = np.linalg.inv(BG.T @ middle) / n
    return 0.5 * (cov + cov.T)
