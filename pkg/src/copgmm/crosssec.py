"""Cross-sectional association estimation: pairwise hybrid densities and
scores, the pairwise composite likelihood estimator, and GMM over the
stacked pair scores.

The parameter vector theta holds one correlation per outcome pair, in lex
order over pairs (j, k), j < k.  Marginal fits enter only through the
per-observation triples (F, F-, f) collected in a MarginArrays object.
"""
import logging
import math

import numpy as np
from scipy import optimize
from scipy.special import ndtri

from . import _kernels as _k
from .copulas import U_CLAMP
from .exceptions import NumericalError
from .glm import MarginArrays
from .gmm import gmm_minimize, pairwise_sandwich_cov

logger = logging.getLogger("copgmm")

DENSITY_FLOOR = 1e-300
RECT_NEG_TOL = -1e-12


def pair_list(p):
    return [(j, k) for j in range(p) for k in range(j + 1, p)]


def pair_labels(p):
    return [f"rho_{j + 1}{k + 1}" for j, k in pair_list(p)]


def _z(u):
    return ndtri(np.clip(u, U_CLAMP, 1.0 - U_CLAMP))


def _zleft(um):
    """Normal score of a left limit; exact zeros map to -inf."""
    um = np.asarray(um, dtype=float)
    out = np.full(um.shape, -np.inf)
    pos = um > 0.0
    out[pos] = ndtri(np.clip(um[pos], U_CLAMP, 1.0 - U_CLAMP))
    return out


def _phi2_arr(z1, z2, rho):
    """phi2(z1, z2; rho) elementwise, zero at infinite arguments."""
    om = 1.0 - rho * rho
    finite = np.isfinite(z1) & np.isfinite(z2)
    z1f = np.where(finite, z1, 0.0)
    z2f = np.where(finite, z2, 0.0)
    q = (z1f * z1f - 2.0 * rho * z1f * z2f + z2f * z2f) / (2.0 * om)
    val = np.exp(-q) / (2.0 * math.pi * math.sqrt(om))
    return np.where(finite, val, 0.0)


def _condcdf_arr(znum, zcond, rho):
    """Phi((zn - rho zc)/sqrt(1-rho^2)); handles -inf numerator scores."""
    s = math.sqrt(1.0 - rho * rho)
    out = np.zeros(znum.shape)
    fin = np.isfinite(znum)
    arg = (znum[fin] - rho * zcond[fin]) / s
    from scipy.special import ndtr
    out[fin] = ndtr(arg)
    return out


def _dcondcdf_arr(znum, zcond, rho):
    """d/drho of the conditional cdf above; zero at -inf scores."""
    om = 1.0 - rho * rho
    s = math.sqrt(om)
    out = np.zeros(znum.shape)
    fin = np.isfinite(znum)
    w = (znum[fin] - rho * zcond[fin]) / s
    out[fin] = (np.exp(-0.5 * w * w) / _k.SQRT_TWOPI
                * (rho * znum[fin] - zcond[fin]) / om ** 1.5)
    return out


def _bvn_arr(z1, z2, rho):
    n = z1.shape[0]
    out = np.empty(n)
    _k._bvn_cdf_batch(np.ascontiguousarray(z1), np.ascontiguousarray(z2),
                      np.full(n, rho), out)
    return out


def pair_loglik_and_score(trip_j, trip_k, rho, want_score=True):
    """Vectorized hybrid pair log density and its rho-score.

    ``trip_j``/``trip_k`` are (F, F-, dens) triples; discreteness is read off
    F - F- > 0.  Returns (logf, score, n_floored).
    """
    Fj, Fmj, dj = (np.atleast_1d(np.asarray(a, dtype=float)) for a in trip_j)
    Fk, Fmk, dk = (np.atleast_1d(np.asarray(a, dtype=float)) for a in trip_k)
    disc_j = (Fj - Fmj) > 0
    disc_k = (Fk - Fmk) > 0
    n = Fj.shape[0]
    zj = _z(Fj)
    zk = _z(Fk)
    zjm = _zleft(Fmj)
    zkm = _zleft(Fmk)

    logf = np.empty(n)
    score = np.zeros(n) if want_score else None
    floored = 0

    cc = ~disc_j & ~disc_k
    if np.any(cc):
        om = 1.0 - rho * rho
        z1, z2 = zj[cc], zk[cc]
        q = (rho * rho * (z1 * z1 + z2 * z2) - 2.0 * rho * z1 * z2) / (2.0 * om)
        logf[cc] = -0.5 * math.log(om) - q + np.log(dj[cc]) + np.log(dk[cc])
        if want_score:
            score[cc] = (rho * om - rho * (z1 * z1 + z2 * z2)
                         + (1.0 + rho * rho) * z1 * z2) / (om * om)

    dc = disc_j & ~disc_k
    if np.any(dc):
        num = (_condcdf_arr(zj[dc], zk[dc], rho)
               - _condcdf_arr(zjm[dc], zk[dc], rho))
        nflo = num < DENSITY_FLOOR
        floored += int(np.sum(nflo))
        numc = np.maximum(num, DENSITY_FLOOR)
        logf[dc] = np.log(numc) + np.log(dk[dc])
        if want_score:
            dnum = (_dcondcdf_arr(zj[dc], zk[dc], rho)
                    - _dcondcdf_arr(zjm[dc], zk[dc], rho))
            score[dc] = np.where(nflo, 0.0, dnum / numc)

    cd = ~disc_j & disc_k
    if np.any(cd):
        num = (_condcdf_arr(zk[cd], zj[cd], rho)
               - _condcdf_arr(zkm[cd], zj[cd], rho))
        nflo = num < DENSITY_FLOOR
        floored += int(np.sum(nflo))
        numc = np.maximum(num, DENSITY_FLOOR)
        logf[cd] = np.log(numc) + np.log(dj[cd])
        if want_score:
            dnum = (_dcondcdf_arr(zk[cd], zj[cd], rho)
                    - _dcondcdf_arr(zkm[cd], zj[cd], rho))
            score[cd] = np.where(nflo, 0.0, dnum / numc)

    dd = disc_j & disc_k
    if np.any(dd):
        rect = (_bvn_arr(zj[dd], zk[dd], rho)
                - _bvn_arr(zjm[dd], zk[dd], rho)
                - _bvn_arr(zj[dd], zkm[dd], rho)
                + _bvn_arr(zjm[dd], zkm[dd], rho))
        if np.any(rect < RECT_NEG_TOL):
            raise NumericalError(
                f"negative rectangle probability {rect.min():.3e}")
        nflo = rect < DENSITY_FLOOR
        floored += int(np.sum(nflo))
        rectc = np.maximum(rect, DENSITY_FLOOR)
        logf[dd] = np.log(rectc)
        if want_score:
            dnum = (_phi2_arr(zj[dd], zk[dd], rho)
                    - _phi2_arr(zjm[dd], zk[dd], rho)
                    - _phi2_arr(zj[dd], zkm[dd], rho)
                    + _phi2_arr(zjm[dd], zkm[dd], rho))
            score[dd] = np.where(nflo, 0.0, dnum / rectc)

    if floored:
        logger.debug("pair density floored on %d observations", floored)
    return logf, score, floored


def pair_density(trip_j, trip_k, rho):
    """Hybrid pair density f_jk (three cases by discreteness of the pair)."""
    logf, _, _ = pair_loglik_and_score(trip_j, trip_k, rho, want_score=False)
    out = np.exp(logf)
    return float(out[0]) if out.size == 1 else out


def pair_score(trip_j, trip_k, rho):
    """d/drho of log f_jk."""
    _, score, _ = pair_loglik_and_score(trip_j, trip_k, rho)
    return float(score[0]) if score.size == 1 else score


def _triple(margins: MarginArrays, j):
    return margins.U[:, j], margins.UM[:, j], margins.DENS[:, j]


def fit_pairwise(margins: MarginArrays, rho_bound=0.995):
    """Pairwise composite likelihood: each pair correlation solves its own
    score equation (the stacked equation B g = 0 decouples per pair)."""
    theta = np.zeros(len(pair_list(margins.p)))
    for idx, (j, k) in enumerate(pair_list(margins.p)):
        tj = _triple(margins, j)
        tk = _triple(margins, k)

        def negll(r):
            logf, _, _ = pair_loglik_and_score(tj, tk, r, want_score=False)
            return -float(np.sum(logf))

        res = optimize.minimize_scalar(
            negll, bounds=(-rho_bound, rho_bound), method="bounded",
            options={"xatol": 1e-10})
        rho = res.x
        # Newton polish on the summed score
        for _ in range(4):
            s = float(np.sum(pair_loglik_and_score(tj, tk, rho)[1]))
            h = 1e-6
            sp = float(np.sum(pair_loglik_and_score(tj, tk, rho + h)[1]))
            sm = float(np.sum(pair_loglik_and_score(tj, tk, rho - h)[1]))
            d = (sp - sm) / (2.0 * h)
            if d >= 0.0 or not np.isfinite(d):
                break
            step = s / d
            cand = rho - step
            if abs(cand) >= rho_bound:
                break
            rho = cand
            if abs(step) < 1e-12:
                break
        theta[idx] = rho
    return theta


def subject_moments(margins: MarginArrays, theta):
    """Stacked per-subject scores: one r-subvector per pair,
    r = number of pairs; q = r * C(p,2) columns."""
    pairs = pair_list(margins.p)
    r = len(pairs)
    n = margins.n
    G = np.zeros((n, r * r))
    for idx, (j, k) in enumerate(pairs):
        _, sc, _ = pair_loglik_and_score(_triple(margins, j),
                                         _triple(margins, k), theta[idx])
        G[:, idx * r + idx] = sc
    return G


def mean_moments(margins: MarginArrays, theta):
    return subject_moments(margins, theta).mean(axis=0)


def _psd_check(p):
    pairs = pair_list(p)

    def check(theta):
        M = np.eye(p)
        for idx, (j, k) in enumerate(pairs):
            M[j, k] = M[k, j] = theta[idx]
        return np.linalg.eigvalsh(M)[0] >= 1e-8

    return check


def fit_gmm(margins: MarginArrays, theta_init=None):
    """One-step GMM over the stacked pair scores, weight fixed at the
    pairwise estimate."""
    if theta_init is None:
        theta_init = fit_pairwise(margins)
    labels = pair_labels(margins.p)
    return gmm_minimize(
        lambda th: mean_moments(margins, th),
        lambda th: subject_moments(margins, th),
        theta_init, margins.n, theta_labels=labels,
        psd_check=_psd_check(margins.p))


def pairwise_asymptotic_cov(margins: MarginArrays, theta):
    """Sandwich covariance of the pairwise estimator with B = I_r (x) 1'."""
    pairs = pair_list(margins.p)
    r = len(pairs)
    B = np.hstack([np.eye(r)] * r)  # I_r (x) 1': sums the pair subvectors
    return pairwise_sandwich_cov(
        lambda th: mean_moments(margins, th),
        lambda th: subject_moments(margins, th),
        theta, B, margins.n)
