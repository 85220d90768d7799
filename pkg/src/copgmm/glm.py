"""Stage-one marginal fits: logistic regression for lapse and Tweedie
log-link quasi-likelihood regression for claims, both by IRLS.

Fitted models expose the marginal distribution triple (F(y), F(y-), f(y))
at any observation, which is all the association stage consumes.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import tweedie as tw
from .exceptions import NumericalError

logger = logging.getLogger("copgmm")

_MAX_ITER = 100
_GRAD_TOL = 1e-8


@dataclass
class MarginalModel:
    family: str                       # "logit" or "tweedie"
    beta: np.ndarray
    se: np.ndarray
    phi: float | None = None          # Tweedie dispersion (Pearson estimate)
    power: float | None = None        # Tweedie power, fixed
    columns: tuple = ()
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = np.nan

    def linpred(self, X):
        return np.asarray(X, dtype=float) @ self.beta

    def predict_mean(self, X):
        """Fitted mean: inverse-logit probability or log-link mean."""
        eta = self.linpred(X)
        if self.family == "logit":
            return expit(eta)
        return np.exp(eta)

    def triplets(self, y, X):
        """(F(y), F(y-), f(y)) arrays at the fitted per-row parameters."""
        mu = self.predict_mean(X)
        if self.family == "logit":
            return tw.bernoulli_triplets(y, mu)
        return tw.tweedie_triplets(y, mu, self.phi, self.power)


def marginal_cdf_triplet(model, y, x_row):
    """Triple (F(y), F(y-), f(y)) for one observation row."""
    F, Fm, dens = model.triplets(np.atleast_1d(np.asarray(y, dtype=float)),
                                 np.atleast_2d(np.asarray(x_row, dtype=float)))
    return float(F[0]), float(Fm[0]), float(dens[0])


def _irls(X, y, family, power=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise ValueError("need more observations than coefficients")

    if family == "logit":
        beta = np.zeros(k)

        def pieces(eta):
            mu = expit(eta)
            w = np.maximum(mu * (1.0 - mu), 1e-10)
            dev = -2.0 * np.sum(y * np.log(np.maximum(mu, 1e-300))
                                + (1.0 - y) * np.log(np.maximum(1.0 - mu, 1e-300)))
            grad = X.T @ (y - mu)
            return mu, w, dev, grad
    else:
        p = power
        ybar = max(float(np.mean(y)), 1e-10)
        beta = np.zeros(k)
        beta[0] = np.log(ybar) if np.allclose(X[:, 0], 1.0) else 0.0

        def pieces(eta):
            mu = np.exp(np.clip(eta, -30.0, 30.0))
            w = mu ** (2.0 - p)
            # Tweedie unit deviance, valid for y >= 0 and 1 < p < 2
            dev = 2.0 * np.sum(y ** (2.0 - p) / ((1.0 - p) * (2.0 - p))
                               - y * mu ** (1.0 - p) / (1.0 - p)
                               + mu ** (2.0 - p) / (2.0 - p))
            grad = X.T @ ((y - mu) * mu ** (1.0 - p))
            return mu, w, dev, grad

    eta = X @ beta
    mu, w, dev, grad = pieces(eta)
    it = 0
    for it in range(1, _MAX_ITER + 1):
        if family == "logit":
            z = eta + (y - mu) / w
        else:
            z = eta + (y - mu) / mu
        XtW = X.T * w
        try:
            beta_new = np.linalg.solve(XtW @ X, XtW @ z)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"IRLS normal equations singular: {exc}")
        step = beta_new - beta
        # step-halving on deviance increase
        lam = 1.0
        for _ in range(30):
            cand = beta + lam * step
            eta_c = X @ cand
            mu_c, w_c, dev_c, grad_c = pieces(eta_c)
            if dev_c <= dev * (1.0 + 1e-12) or lam < 1e-8:
                break
            lam *= 0.5
        moved = np.max(np.abs(lam * step))
        beta, eta, mu, w, dev, grad = cand, eta_c, mu_c, w_c, dev_c, grad_c
        if np.max(np.abs(beta)) > 1e4 or np.max(np.abs(eta)) > 200.0:
            raise NumericalError(
                "IRLS diverged (separation or degenerate design)")
        if moved < 1e-10 and np.max(np.abs(grad)) < _GRAD_TOL:
            break
    gnorm = float(np.max(np.abs(grad)))
    converged = gnorm < _GRAD_TOL
    if not converged:
        logger.warning("IRLS stopped at iteration %d with gradient norm %.2e",
                       it, gnorm)
    return beta, mu, w, it, converged, gnorm


def fit_logistic(X, y, columns=()):
    """Maximum-likelihood logistic regression via IRLS.

    Raises NumericalError when the fit diverges (complete separation).
    """
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("fit_logistic needs a 0/1 response")
    if y.min() == y.max():
        raise ValueError("fit_logistic needs both response levels present")
    beta, mu, w, it, conv, gnorm = _irls(X, y, "logit")
    X = np.asarray(X, dtype=float)
    info = (X.T * w) @ X
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    return MarginalModel(family="logit", beta=beta, se=se,
                         columns=tuple(columns), converged=conv,
                         iterations=it, gradient_norm=gnorm)


def fit_tweedie(X, y, power=1.67, columns=()):
    """Tweedie quasi-likelihood regression with log link and fixed power.

    Dispersion phi is the Pearson statistic over residual degrees of
    freedom.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("fit_tweedie needs a nonnegative response")
    if not np.any(y > 0):
        raise ValueError("fit_tweedie needs at least one positive response")
    if not 1.0 < power < 2.0:
        raise ValueError("power must lie in (1, 2)")
    beta, mu, w, it, conv, gnorm = _irls(X, y, "tweedie", power=power)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    phi = float(np.sum((y - mu) ** 2 / mu ** power) / (n - k))
    info = (X.T * w) @ X
    se = np.sqrt(phi * np.diag(np.linalg.inv(info)))
    return MarginalModel(family="tweedie", beta=beta, se=se, phi=phi,
                         power=power, columns=tuple(columns), converged=conv,
                         iterations=it, gradient_norm=gnorm)


@dataclass
class MarginArrays:
    """Per-observation marginal evaluations for the association stage.

    Arrays have shape (n, p): cdf U, left limit UM, density/mass DENS and
    the discreteness indicator DISC (true where F(y) - F(y-) > 0).
    """
    U: np.ndarray
    UM: np.ndarray
    DENS: np.ndarray
    DISC: np.ndarray

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def p(self):
        return self.U.shape[1]


def margin_arrays(Y, margins, X=None):
    """Build MarginArrays from per-outcome margins.

    Each margin is either a fitted MarginalModel (requires X) or a
    distribution parameter object (TweedieParams / BernoulliParams).
    """
    Y = np.asarray(Y, dtype=float)
    n, p = Y.shape
    U = np.empty((n, p))
    UM = np.empty((n, p))
    DENS = np.empty((n, p))
    for j, margin in enumerate(margins):
        y = Y[:, j]
        if isinstance(margin, MarginalModel):
            F, Fm, dens = margin.triplets(y, X)
        elif isinstance(margin, tw.TweedieParams):
            F, Fm, dens = tw.tweedie_triplets(y, margin.mu, margin.phi,
                                              margin.power)
        elif isinstance(margin, tw.BernoulliParams):
            F, Fm, dens = tw.bernoulli_triplets(y, margin.pi)
        else:
            raise TypeError(f"unsupported margin type {type(margin)!r}")
        U[:, j], UM[:, j], DENS[:, j] = F, Fm, dens
    DISC = (U - UM) > 0
    return MarginArrays(U=U, UM=UM, DENS=DENS, DISC=DISC)
