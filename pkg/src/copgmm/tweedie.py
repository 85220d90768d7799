"""Marginal distributions: Tweedie compound Poisson-gamma and Bernoulli.

The Tweedie family here is restricted to power in (1, 2), the compound
Poisson-gamma regime with a point mass at zero, mean ``mu`` and variance
``phi * mu**power``.  Density and cdf go through the series kernels in
:mod:`copgmm._kernels`; sampling uses the compound representation directly.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k


@dataclass(frozen=True)
class TweedieParams:
    """mu > 0, phi > 0, 1 < power < 2."""
    mu: float
    phi: float
    power: float = 1.67

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("TweedieParams: mu must be positive")
        if not self.phi > 0:
            raise ValueError("TweedieParams: phi must be positive")
        if not 1.0 < self.power < 2.0:
            raise ValueError("TweedieParams: power must lie in (1, 2)")

    @property
    def poisson_rate(self):
        return self.mu ** (2.0 - self.power) / (self.phi * (2.0 - self.power))

    @property
    def gamma_shape(self):
        return (2.0 - self.power) / (self.power - 1.0)

    @property
    def gamma_scale(self):
        return self.phi * (self.power - 1.0) * self.mu ** (self.power - 1.0)


@dataclass(frozen=True)
class BernoulliParams:
    """pi in (0, 1): success (lapse) probability."""
    pi: float

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise ValueError("BernoulliParams: pi must lie in (0, 1)")


def tweedie_pzero(p: TweedieParams) -> float:
    """P(Y = 0) = exp(-mu^(2-P) / (phi (2-P)))."""
    return math.exp(_k.tweedie_logpzero(p.mu, p.phi, p.power))


def tweedie_density(y, p: TweedieParams):
    """Hybrid density: point mass at 0, continuous density for y > 0."""
    scalar = np.isscalar(y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0):
        raise ValueError("tweedie_density requires y >= 0")
    out = np.empty(y.shape)
    mu = np.full(y.shape, p.mu)
    _k._tweedie_logpdf_batch(y, mu, p.phi, p.power, out)
    out = np.exp(out)
    return float(out[0]) if scalar else out


def tweedie_cdf(y, p: TweedieParams):
    scalar = np.isscalar(y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0):
        raise ValueError("tweedie_cdf requires y >= 0")
    out = np.empty(y.shape)
    mu = np.full(y.shape, p.mu)
    _k._tweedie_cdf_batch(y, mu, p.phi, p.power, out)
    return float(out[0]) if scalar else out


def tweedie_quantile(u, p: TweedieParams):
    scalar = np.isscalar(u)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("tweedie_quantile requires u in (0, 1)")
    out = np.empty(u.shape)
    mu = np.full(u.shape, p.mu)
    _k._tweedie_quantile_batch(u, mu, p.phi, p.power, out)
    return float(out[0]) if scalar else out


def tweedie_sample(p: TweedieParams, rng, size=None):
    """Compound Poisson draw: N ~ Poisson(lambda), Y | N ~ Gamma(N*shape, scale)."""
    n = rng.poisson(p.poisson_rate, size=size)
    y = np.where(n > 0, rng.gamma(np.maximum(n, 1) * p.gamma_shape,
                                  p.gamma_scale), 0.0)
    if size is None:
        return float(y)
    return y


# --- vectorized forms with per-observation means (used by fitted margins) ---

def tweedie_cdf_mu(y, mu, phi, power):
    y = np.ascontiguousarray(y, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)
    out = np.empty(y.shape)
    _k._tweedie_cdf_batch(y, mu, phi, power, out)
    return out


def tweedie_logpdf_mu(y, mu, phi, power):
    y = np.ascontiguousarray(y, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)
    out = np.empty(y.shape)
    _k._tweedie_logpdf_batch(y, mu, phi, power, out)
    return out


def tweedie_quantile_mu(u, mu, phi, power):
    u = np.ascontiguousarray(u, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)
    out = np.empty(u.shape)
    _k._tweedie_quantile_batch(u, mu, phi, power, out)
    return out


def tweedie_triplets(y, mu, phi, power):
    """(F(y), F(y-), f(y)) arrays for Tweedie observations.

    f(y) is the continuous density at y > 0 and the atom mass at y = 0;
    the left limit F(y-) equals F(y) at continuity points and 0 at the atom.
    """
    y = np.asarray(y, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape).copy()
    F = tweedie_cdf_mu(y, mu, phi, power)
    dens = np.exp(tweedie_logpdf_mu(y, mu, phi, power))
    Fm = np.where(y > 0, F, 0.0)
    return F, Fm, dens


def bernoulli_triplets(y, pi):
    """(F(y), F(y-), mass) arrays for 0/1 outcomes with P(Y=1) = pi."""
    y = np.asarray(y)
    pi = np.broadcast_to(np.asarray(pi, dtype=float), y.shape)
    one = y > 0.5
    F = np.where(one, 1.0, 1.0 - pi)
    Fm = np.where(one, 1.0 - pi, 0.0)
    mass = np.where(one, pi, 1.0 - pi)
    return F, Fm, mass
