import math

import numpy as np
import pytest
import scipy.integrate as si

from copgmm import copulas as cp
from copgmm.mvnorm import mvn_cdf, std_normal_quantile
from conftest import rand_corr, richardson_fd


def rand_assoc(rng, d):
    """Association matrix with non-unit diagonal, moderately conditioned."""
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.5 * d * np.eye(d)


def test_copula_margins_and_independence(rng):
    # C(u1, 1, 1) = u1 and C(u; I) = prod(u)
    S = rand_assoc(rng, 3)
    for u1 in (0.2, 0.5, 0.9):
        assert cp.copula_cdf(np.array([u1, 1.0, 1.0]), S) == pytest.approx(
            u1, abs=1e-9)
    u = np.array([0.3, 0.6, 0.8])
    assert cp.copula_cdf(u, np.eye(3)) == pytest.approx(np.prod(u), abs=1e-9)
    assert cp.copula_cdf(np.array([0.4, 0.0, 0.9]), S) == 0.0


def test_copula_cdf_monte_carlo(rng):
    # MC oracle for the d=3 exchangeable case
    S = np.array([[1, 0.5, 0.5], [0.5, 1, 0.5], [0.5, 0.5, 1.0]])
    u = np.array([0.5, 0.5, 0.5])
    val = cp.copula_cdf(u, S)
    L = np.linalg.cholesky(S)
    n = 2 * 10**6
    z = rng.standard_normal((n, 3)) @ L.T
    x = std_normal_quantile(u)
    pm = np.mean(np.all(z <= x, axis=1))
    assert val == pytest.approx(pm, abs=3 * math.sqrt(pm * (1 - pm) / n))


def test_copula_h1():
    assert cp.copula_h1(0.37, 0.8, 0.0) == pytest.approx(0.37, abs=1e-12)
    # finite-difference oracle in the second argument
    h = 1e-6
    base = np.array([[1.0, 0.5], [0.5, 1.0]])
    num = (cp.copula_cdf(np.array([0.3, 0.7 + h]), base)
           - cp.copula_cdf(np.array([0.3, 0.7 - h]), base)) / (2 * h)
    assert cp.copula_h1(0.3, 0.7, 0.5) == pytest.approx(num, rel=1e-5)
    # comonotone limit: step toward indicator(u1 >= u2)
    assert cp.copula_h1(0.6, 0.4, 0.9999) == pytest.approx(1.0, abs=1e-3)
    assert cp.copula_h1(0.4, 0.6, 0.9999) == pytest.approx(0.0, abs=1e-3)
    assert cp.copula_h1(0.5, 0.5, 0.999) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        cp.copula_h1(0.3, 0.7, 1.0)


def test_copula_density2():
    assert cp.copula_density2(0.3, 0.8, 0.0) == pytest.approx(1.0)
    # closed form at the median point: 1/sqrt(1-rho^2)
    assert cp.copula_density2(0.5, 0.5, 0.5) == pytest.approx(
        1.0 / math.sqrt(0.75), abs=1e-12)
    val, err = si.dblquad(lambda v, u: cp.copula_density2(u, v, 0.3),
                          1e-6, 1 - 1e-6, 1e-6, 1 - 1e-6,
                          epsabs=1e-6, epsrel=1e-6)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_plackett_bivariate():
    # phi2(0, 0; 0) = 1/(2 pi)
    assert cp.drho_copula_cdf2(0.5, 0.5, 0.0) == pytest.approx(
        1.0 / (2 * math.pi), abs=1e-14)
    # symmetry at mirrored arguments
    assert cp.drho_copula_cdf2(0.3, 0.7, 0.0) == pytest.approx(
        cp.drho_copula_cdf2(0.7, 0.3, 0.0), abs=1e-14)


def test_plackett_fd_grid(rng):
    # 1000 random (u1, u2, rho) points against Richardson-refined central
    # differences of the copula cdf; the relative comparison binds above a
    # 1e-4 magnitude floor (below it the float64 difference quotient of the
    # bivariate cdf is roundoff-limited)
    worst = 0.0
    for _ in range(1000):
        u1, u2 = rng.uniform(0.05, 0.95, 2)
        rho = float(rng.uniform(-0.9, 0.9))

        def f(r, u1=u1, u2=u2):
            return cp.copula_cdf(np.array([u1, u2]),
                                 np.array([[1.0, r], [r, 1.0]]))

        num = richardson_fd(f, rho)
        an = cp.drho_copula_cdf2(u1, u2, rho)
        worst = max(worst, abs(an - num) / max(abs(num), 1e-4))
    assert worst < 1e-5, worst


def test_drho_copula_h_closed_form():
    # at rho=0 and u1=u2=u: phi(z) * (-z)
    for u in (0.3, 0.6, 0.85):
        z = std_normal_quantile(u)
        expect = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) * (-z)
        assert cp.drho_copula_h(u, u, 0.0) == pytest.approx(expect, abs=1e-12)
    assert cp.drho_copula_h(0.5, 0.5, 0.0) == 0.0
    num = richardson_fd(lambda r: cp.copula_h1(0.3, 0.7, r), 0.2)
    assert cp.drho_copula_h(0.3, 0.7, 0.2) == pytest.approx(num, rel=1e-6)


def test_h1_d_cases(rng):
    # d=1 base case and d=2 independence factorization
    x1 = 0.4
    assert cp.h1_d(np.array([x1]), np.eye(1), 0) == pytest.approx(
        math.exp(-0.5 * x1 * x1) / math.sqrt(2 * math.pi))
    from scipy.special import ndtr
    val = cp.h1_d(np.array([0.5, -0.3]), np.eye(2), 0)
    assert val == pytest.approx(
        math.exp(-0.125) / math.sqrt(2 * math.pi) * ndtr(-0.3), abs=1e-12)
    # d=3 randomized FD oracle
    R = rand_corr(rng, 3)
    x = rng.normal(size=3)
    k = 1
    num = richardson_fd(
        lambda t: mvn_cdf(np.concatenate([x[:k], [t], x[k + 1:]]), R,
                          validate=False)[0], x[k])
    assert cp.h1_d(x, R, k) == pytest.approx(num, rel=1e-4)


def test_h2_d_cases(rng):
    # d=2 reduces to the bivariate Plackett term at normal scores
    u = np.array([0.35, 0.6])
    x = std_normal_quantile(u)
    R = np.array([[1.0, 0.4], [0.4, 1.0]])
    assert cp.h2_d(x, R, 0, 1) == pytest.approx(
        cp.drho_copula_cdf2(u[0], u[1], 0.4), abs=1e-12)
    # closed form at the origin with R = I: phi2(0,0;0) * Phi(0)
    assert cp.h2_d(np.zeros(3), np.eye(3), 0, 1) == pytest.approx(
        0.5 / (2 * math.pi), abs=1e-10)
    # d=5 randomized FD oracle
    R = rand_corr(rng, 5)
    x = rng.normal(size=5)

    def f(r):
        RR = R.copy()
        RR[0, 2] = RR[2, 0] = r
        return mvn_cdf(x, RR, validate=False)[0]

    num = richardson_fd(f, R[0, 2])
    assert cp.h2_d(x, R, 0, 2) == pytest.approx(num, rel=1e-4)


def test_partial_md_reductions(rng):
    # d=2 with the partial in the second coordinate reduces to copula_h1
    S2 = np.array([[1.0, 0.45], [0.45, 1.0]])
    assert cp.copula_partial_md(np.array([0.3, 0.7]), S2, 1) == pytest.approx(
        cp.copula_h1(0.3, 0.7, 0.45), abs=1e-12)
    # d=3 independence: partial wrt u3 of u1 u2 u3 is u1 u2
    u = np.array([0.3, 0.6, 0.8])
    assert cp.copula_partial_md(u, np.eye(3), 2) == pytest.approx(
        0.18, abs=1e-9)
    # d=4 random FD oracle
    S = rand_assoc(rng, 4)
    u = rng.uniform(0.15, 0.85, size=4)
    j = 2

    def f(v):
        uu = u.copy()
        uu[j] = v
        return cp.copula_cdf(uu, S)

    num = richardson_fd(f, u[j])
    assert cp.copula_partial_md(u, S, j) == pytest.approx(num, rel=1e-4)


def test_partial2_md_reductions(rng):
    # d=2: the bivariate copula density
    S2 = np.array([[1.0, 0.45], [0.45, 1.0]])
    assert cp.copula_partial2_md(np.array([0.3, 0.7]), S2, 0, 1) == \
        pytest.approx(cp.copula_density2(0.3, 0.7, 0.45), abs=1e-12)
    # d=3 independence: remaining factor
    u = np.array([0.3, 0.6, 0.8])
    assert cp.copula_partial2_md(u, np.eye(3), 1, 2) == pytest.approx(
        0.3, abs=1e-9)
    # d=5 mixed second central difference oracle
    S = rand_assoc(rng, 5)
    u = rng.uniform(0.2, 0.8, size=5)
    j, k = 1, 3
    h = 3e-4

    def f(a, b):
        uu = u.copy()
        uu[j] = a
        uu[k] = b
        return cp.copula_cdf(uu, S)

    num = (f(u[j] + h, u[k] + h) - f(u[j] + h, u[k] - h)
           - f(u[j] - h, u[k] + h) + f(u[j] - h, u[k] - h)) / (4 * h * h)
    assert cp.copula_partial2_md(u, S, j, k) == pytest.approx(num, rel=1e-3)


def test_drho_partial_copula(rng):
    # trivariate special case with unit conditional variances:
    # at rho_13 = rho_23 = 0, moving rho_12 leaves the rescaled arguments
    # fixed and d rho_x / d rho_12 = 1
    u = np.array([0.4, 0.55, 0.7])
    R = np.eye(3)
    R[0, 1] = R[1, 0] = 0.3
    val = cp.drho_partial_copula(u, R, 2, (0, 1))
    z = std_normal_quantile(u)
    assert val == pytest.approx(cp.drho_copula_cdf2(u[0], u[1], 0.3),
                                abs=1e-10)
    # trivariate random vs finite differences
    R3 = rand_corr(rng, 3, eigfloor=0.3)
    u = rng.uniform(0.2, 0.8, size=3)

    def f(r):
        RR = R3.copy()
        RR[0, 2] = RR[2, 0] = r
        return cp.copula_partial_md(u, RR, 2)

    num = richardson_fd(f, R3[0, 2])
    assert cp.drho_partial_copula(u, R3, 2, (0, 2)) == pytest.approx(
        num, rel=1e-4)
    # d=4 random vs finite differences
    S = rand_assoc(rng, 4)
    u = rng.uniform(0.2, 0.8, size=4)

    def g(r):
        SS = S.copy()
        SS[1, 3] = SS[3, 1] = r
        return cp.copula_partial_md(u, SS, 0)

    num = richardson_fd(g, S[1, 3])
    assert cp.drho_partial_copula(u, S, 0, (1, 3)) == pytest.approx(
        num, rel=1e-4)


def test_drho_partial2_copula(rng):
    # d=2: derivative of the bivariate copula density
    u2 = np.array([0.3, 0.7])
    R2 = np.array([[1.0, 0.25], [0.25, 1.0]])
    num = richardson_fd(lambda r: cp.copula_density2(0.3, 0.7, r), 0.25)
    assert cp.drho_partial2_copula(u2, R2, 0, 1, (0, 1)) == pytest.approx(
        num, rel=1e-7)
    # trivariate at zero correlations
    u = np.array([0.5, 0.5, 0.5])
    R = np.eye(3)

    def f(r):
        RR = R.copy()
        RR[0, 1] = RR[1, 0] = r
        return cp.copula_partial2_md(u, RR, 1, 2)

    num = richardson_fd(f, 0.0)
    assert cp.drho_partial2_copula(u, R, 1, 2, (0, 1)) == pytest.approx(
        num, rel=1e-4, abs=1e-10)
    # d=5 random vs finite differences
    S = rand_assoc(rng, 5)
    u = rng.uniform(0.2, 0.8, size=5)

    def g(r):
        SS = S.copy()
        SS[0, 4] = SS[4, 0] = r
        return cp.copula_partial2_md(u, SS, 2, 4)

    num = richardson_fd(g, S[0, 4])
    assert cp.drho_partial2_copula(u, S, 2, 4, (0, 4)) == pytest.approx(
        num, rel=1e-3)


def test_trivariate_specials_match_general(rng):
    for _ in range(20):
        rr = rng.uniform(-0.45, 0.45, size=3)
        R3 = np.array([[1, rr[0], rr[1]], [rr[0], 1, rr[2]],
                       [rr[1], rr[2], 1.0]])
        if np.linalg.eigvalsh(R3)[0] < 0.05:
            continue
        u = rng.uniform(0.1, 0.9, size=3)
        for wrt, ab in (("12", (0, 1)), ("13", (0, 2)), ("23", (1, 2))):
            gen = cp.drho_partial_copula(u, R3, 2, ab)
            tri = cp.trivariate_dpartial_drho(u[0], u[1], u[2],
                                              rr[0], rr[1], rr[2], wrt)
            assert gen == pytest.approx(tri, rel=1e-10, abs=1e-12)
            gen2 = cp.drho_partial2_copula(u, R3, 1, 2, ab)
            tri2 = cp.trivariate_dpartial2_drho(u[0], u[1], u[2],
                                                rr[0], rr[1], rr[2], wrt)
            assert gen2 == pytest.approx(tri2, rel=1e-10, abs=1e-12)


def test_corr_from_assoc():
    S = np.array([[4.0, 1.0], [1.0, 1.0]])
    R = cp.corr_from_assoc(S)
    assert R[0, 0] == 1.0 and R[1, 1] == 1.0
    assert R[0, 1] == pytest.approx(0.5)
