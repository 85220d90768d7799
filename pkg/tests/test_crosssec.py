import math

import numpy as np
import pytest
import scipy.integrate as si
from scipy.special import ndtr

from copgmm import crosssec as cs
from copgmm.copulas import copula_cdf, copula_density2, dlog_copula_density2
from copgmm.glm import margin_arrays
from copgmm.tweedie import (TweedieParams, BernoulliParams,
                            tweedie_quantile_mu, tweedie_triplets,
                            bernoulli_triplets)

TW1 = TweedieParams(mu=3.0, phi=1.0, power=1.67)
TW2 = TweedieParams(mu=5.0, phi=2.0, power=1.67)
TRUTH = np.array([-0.2, 0.2, 0.1])


def simulate_margins(rng, n, truth=TRUTH, pi=0.3):
    R = np.eye(3)
    R[0, 1] = R[1, 0] = truth[0]
    R[0, 2] = R[2, 0] = truth[1]
    R[1, 2] = R[2, 1] = truth[2]
    z = rng.standard_normal((n, 3)) @ np.linalg.cholesky(R).T
    u = ndtr(z)
    Y = np.column_stack([
        (u[:, 0] > 1 - pi).astype(float),
        tweedie_quantile_mu(u[:, 1], np.full(n, TW1.mu), TW1.phi, TW1.power),
        tweedie_quantile_mu(u[:, 2], np.full(n, TW2.mu), TW2.phi, TW2.power)])
    return margin_arrays(Y, [BernoulliParams(pi), TW1, TW2])


def trip_at(y, tw):
    F, Fm, dens = tweedie_triplets(np.array([float(y)]), tw.mu, tw.phi,
                                   tw.power)
    return F[0], Fm[0], dens[0]


def test_pair_density_independence_factorizes():
    # rho = 0 gives the product of marginal hybrid densities in every case
    for y1 in (0.0, 1.2):
        for y2 in (0.0, 2.5):
            t1, t2 = trip_at(y1, TW1), trip_at(y2, TW2)
            assert cs.pair_density(t1, t2, 0.0) == pytest.approx(
                t1[2] * t2[2] if (y1 > 0 and y2 > 0) else
                (t1[0] - t1[1]) * t2[2] if y1 == 0 and y2 > 0 else
                t1[2] * (t2[0] - t2[1]) if y1 > 0 and y2 == 0 else
                (t1[0] - t1[1]) * (t2[0] - t2[1]), rel=1e-10)


def test_pair_density_two_zeros_is_copula_cdf():
    # Pr(Y_j=0, Y_k=0) = C(F_j(0), F_k(0))
    t1, t2 = trip_at(0.0, TW1), trip_at(0.0, TW2)
    rho = 0.35
    expect = copula_cdf(np.array([t1[0], t2[0]]),
                        np.array([[1.0, rho], [rho, 1.0]]))
    assert cs.pair_density(t1, t2, rho) == pytest.approx(expect, rel=1e-9)


def test_pair_space_normalization():
    # atom + two half-lines + quadrant integrate to one
    rho = 0.3
    p00 = cs.pair_density(trip_at(0.0, TW1), trip_at(0.0, TW2), rho)
    l1, _ = si.quad(lambda y: cs.pair_density(trip_at(y, TW1),
                                              trip_at(0.0, TW2), rho),
                    1e-9, 60, limit=100)
    l2, _ = si.quad(lambda y: cs.pair_density(trip_at(0.0, TW1),
                                              trip_at(y, TW2), rho),
                    1e-9, 80, limit=100)
    quad, _ = si.dblquad(
        lambda y2, y1: cs.pair_density(trip_at(y1, TW1), trip_at(y2, TW2),
                                       rho),
        1e-9, 40, 1e-9, 60, epsabs=2e-4, epsrel=2e-4)
    assert p00 + l1 + l2 + quad == pytest.approx(1.0, abs=1e-3)


def test_pair_score_cases(rng):
    # continuous-continuous case equals d log c / d rho
    t1, t2 = trip_at(1.7, TW1), trip_at(3.2, TW2)
    rho = 0.25
    assert cs.pair_score(t1, t2, rho) == pytest.approx(
        dlog_copula_density2(t1[0], t2[0], rho), rel=1e-10)
    # all cases: finite-difference consistency in rho
    for y1 in (0.0, 1.7):
        for y2 in (0.0, 3.2):
            t1, t2 = trip_at(y1, TW1), trip_at(y2, TW2)
            h = 1e-6
            num = (math.log(cs.pair_density(t1, t2, rho + h))
                   - math.log(cs.pair_density(t1, t2, rho - h))) / (2 * h)
            assert cs.pair_score(t1, t2, rho) == pytest.approx(num, rel=1e-5)


def test_pair_score_fd_500_points(rng):
    # scores equal central finite differences of the log density at 500
    # random admissible observations, rel err < 1e-5
    margins = simulate_margins(rng, 500)
    h = 1e-6
    worst = 0.0
    for idx, (j, k) in enumerate(cs.pair_list(3)):
        rho = float(rng.uniform(-0.5, 0.5))
        tj = (margins.U[:, j], margins.UM[:, j], margins.DENS[:, j])
        tk = (margins.U[:, k], margins.UM[:, k], margins.DENS[:, k])
        lf_p, _, _ = cs.pair_loglik_and_score(tj, tk, rho + h,
                                              want_score=False)
        lf_m, _, _ = cs.pair_loglik_and_score(tj, tk, rho - h,
                                              want_score=False)
        _, sc, _ = cs.pair_loglik_and_score(tj, tk, rho)
        num = (lf_p - lf_m) / (2 * h)
        worst = max(worst, np.max(np.abs(sc - num)
                                  / np.maximum(np.abs(num), 1e-4)))
    assert worst < 1e-5, worst


def test_pair_score_mean_zero_at_truth(rng):
    margins = simulate_margins(rng, 10**4)
    for idx, (j, k) in enumerate(cs.pair_list(3)):
        _, sc, _ = cs.pair_loglik_and_score(
            (margins.U[:, j], margins.UM[:, j], margins.DENS[:, j]),
            (margins.U[:, k], margins.UM[:, k], margins.DENS[:, k]),
            TRUTH[idx])
        se = sc.std(ddof=1) / math.sqrt(sc.size)
        assert abs(sc.mean()) < 3 * se


def test_information_identity_at_independence(rng):
    # empirical variance of the score matches the information numerically
    margins = simulate_margins(rng, 10**4, truth=np.zeros(3))
    for idx, (j, k) in enumerate(cs.pair_list(3)):
        tj = (margins.U[:, j], margins.UM[:, j], margins.DENS[:, j])
        tk = (margins.U[:, k], margins.UM[:, k], margins.DENS[:, k])
        _, sc, _ = cs.pair_loglik_and_score(tj, tk, 0.0)
        h = 1e-5
        _, scp, _ = cs.pair_loglik_and_score(tj, tk, h)
        _, scm, _ = cs.pair_loglik_and_score(tj, tk, -h)
        info = -np.mean((scp - scm) / (2 * h))
        var = sc.var(ddof=1)
        se = sc.var(ddof=1) / math.sqrt(sc.size) * 3  # rough MC band
        assert var == pytest.approx(info, rel=0.15)


def test_fit_pairwise_recovers_truth(rng):
    margins = simulate_margins(rng, 2000)
    theta = cs.fit_pairwise(margins)
    res = cs.fit_gmm(margins, theta)
    assert np.all(np.abs(theta - TRUTH) < 4 * res.se)


def test_fit_pairwise_null_recovery(rng):
    margins = simulate_margins(rng, 2000, truth=np.zeros(3))
    theta = cs.fit_pairwise(margins)
    res = cs.fit_gmm(margins, theta)
    assert np.all(np.abs(theta) < 3.5 * res.se)


def test_gmm_just_identified_p2(rng):
    margins3 = simulate_margins(rng, 1500)
    # restrict to outcomes (0, 1): p = 2 is just identified
    from copgmm.glm import MarginArrays
    m2 = MarginArrays(U=margins3.U[:, :2], UM=margins3.UM[:, :2],
                      DENS=margins3.DENS[:, :2], DISC=margins3.DISC[:, :2])
    theta_pl = cs.fit_pairwise(m2)
    res = cs.fit_gmm(m2, theta_pl)
    assert res.theta[0] == pytest.approx(theta_pl[0], abs=1e-8)
    assert res.J == pytest.approx(0.0, abs=1e-8)
    assert res.df == 0
    # pairwise covariance equals the GMM covariance when just identified
    Vpl = cs.pairwise_asymptotic_cov(m2, theta_pl)
    assert np.allclose(Vpl, res.cov, rtol=1e-6)


def test_gmm_df_formula(rng):
    margins = simulate_margins(rng, 1200)
    res = cs.fit_gmm(margins)
    # r * C(p, 2) - r with p = 3, r = 3
    assert res.n_moments == 9
    assert res.df == 6


def test_efficiency_ordering(rng):
    # V_PL - V_GMM is PSD on simulated designs
    for truth in (TRUTH, np.array([0.3, -0.1, 0.2]), np.zeros(3)):
        margins = simulate_margins(rng, 1500, truth=truth)
        theta_pl = cs.fit_pairwise(margins)
        res = cs.fit_gmm(margins, theta_pl)
        Vpl = cs.pairwise_asymptotic_cov(margins, theta_pl)
        diff = Vpl - res.cov
        assert np.linalg.eigvalsh(diff).min() >= -1e-8


def test_sandwich_matches_replication(rng):
    # replicate the pairwise estimator and compare the sandwich SE
    n = 300
    reps = 500
    ests = np.empty((reps, 3))
    for r in range(reps):
        margins = simulate_margins(rng, n)
        ests[r] = cs.fit_pairwise(margins)
    emp = ests.std(axis=0, ddof=1)
    margins = simulate_margins(rng, n)
    Vpl = cs.pairwise_asymptotic_cov(margins, TRUTH)
    sand = np.sqrt(np.diag(Vpl))
    assert np.all(np.abs(sand - emp) / emp < 0.2)


def test_rectangle_negative_raises(monkeypatch):
    # valid inputs never produce a negative rectangle analytically, so the
    # floating-point guard is exercised by forcing the bivariate cdf low
    calls = {"n": 0}

    def bad_bvn(z1, z2, rho):
        calls["n"] += 1
        return np.full(z1.shape, -1e-6 if calls["n"] == 1 else 0.0)

    monkeypatch.setattr(cs, "_bvn_arr", bad_bvn)
    from copgmm.exceptions import NumericalError
    with pytest.raises(NumericalError, match="negative rectangle"):
        cs.pair_density(trip_at(0.0, TW1), trip_at(0.0, TW2), 0.1)
