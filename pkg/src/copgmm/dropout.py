"""Dropout-aware association estimation.

Lapse-time probabilities, conditional pair densities given the lapse time,
their association-parameter scores, and the dropout GMM.  Two evaluation
paths: a closed-form trivariate fast path under temporal independence (the
conditional density reduces to three-dimensional copula quantities divided
by the period's renewal or lapse probability) and a general path that
differences (m+2)-dimensional copula partials assembled from the temporal
loading matrices.

Under temporal independence the lapse decision is ignorable for the
marginal claim models: a claim in period t couples only with the renewal
decision of the same period, never with whether the period itself is
observed (period-1 rows always are), so the observed-row likelihood factors
and stage-one GLMs fit on observed rows stay consistent.  The association
stage conditions on the lapse time explicitly, which is what the machinery
here implements.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import ndtri

from . import _kernels as _k
from . import copulas as cop
from .exceptions import NumericalError
from .gmm import GmmResult, gmm_minimize
from .temporal import (AssociationParams, assemble_sigma_pair, build_psi,
                       dsigma_pair_dtheta)

logger = logging.getLogger("copgmm")

DENSITY_FLOOR = 1e-300


def _resolve_method(method, params):
    if method == "auto":
        return "independence" if params.is_temporal_independent else "general"
    if method not in ("independence", "general"):
        raise ValueError("method must be 'auto', 'independence' or 'general'")
    if method == "independence" and not params.is_temporal_independent:
        raise ValueError("independence path requires identity loadings")
    return method


def lapse_time_prob(t, atoms, params: AssociationParams, method="auto",
                    tol=None):
    """P(T = t) for lapse time T in 1..m+1 given per-period renewal
    probabilities atoms[u] = F_L,u(0)."""
    m = params.m
    if not 1 <= t <= m + 1:
        raise ValueError("lapse time t must lie in 1..m+1")
    atoms = np.asarray(atoms, dtype=float)
    needed = m if t == m + 1 else t
    if atoms.size < needed:
        raise ValueError("atoms must cover periods 1..min(t, m)")
    path = _resolve_method(method, params)
    if path == "independence":
        if t == m + 1:
            return float(np.prod(atoms[:m]))
        return float(np.prod(atoms[:t - 1]) * (1.0 - atoms[t - 1]))
    psi_l = build_psi(params.temporal_lapse)
    sigma_l = psi_l @ psi_l.T
    if t == m + 1:
        return cop.copula_cdf(atoms[:m], sigma_l, tol=tol)
    u_hi = np.ones(m)
    u_hi[:t - 1] = atoms[:t - 1]
    u_lo = u_hi.copy()
    u_lo[t - 1] = atoms[t - 1]
    return (cop.copula_cdf(u_hi, sigma_l, tol=tol)
            - cop.copula_cdf(u_lo, sigma_l, tol=tol))


def dlapse_time_prob_dtheta(t, atoms, params: AssociationParams):
    """Gradient of P(T = t) in the estimated correlations: identically zero,
    because the lapse margin depends only on the (fixed) temporal loadings."""
    return np.zeros(params.n_theta)


def _trip_scalars(trip):
    F, Fm, dens = (float(v) for v in trip)
    disc = (F - Fm) > 0
    return F, Fm, dens, disc


def _zc(u):
    return ndtri(min(max(u, cop.U_CLAMP), 1.0 - cop.U_CLAMP))


def _indep_cell_arrays(trip1, trip2, s, t, atom_s):
    F1, _, f1, d1 = _trip_scalars(trip1)
    F2, _, f2, d2 = _trip_scalars(trip2)
    steq = (s == t)
    za = _zc(atom_s)
    z1 = _zc(F1)
    z2 = _zc(F2)
    lf1 = 0.0 if d1 else math.log(max(f1, DENSITY_FLOOR))
    lf2 = 0.0 if d2 else math.log(max(f2, DENSITY_FLOOR))
    logden = math.log(1.0 - atom_s) if steq else math.log(atom_s)
    return (np.array([za]), np.array([z1]), np.array([z2]),
            np.array([d1]), np.array([d2]), np.array([steq]),
            np.array([lf1]), np.array([lf2]), np.array([logden]))


def _indep_cell_eval(trip1, trip2, s, t, atom_s, r1, r2, r3):
    arrays = _indep_cell_arrays(trip1, trip2, s, t, atom_s)
    logf = np.empty(1)
    score = np.empty((1, 3))
    _k._indep_cells_eval(r1, r2, r3, *arrays, logf, score)
    return float(logf[0]), score[0]


def _general_cell(trip1, trip2, j, k, s, t, atoms, params, want_score,
                  tol=None):
    """General-path numerator: signed sums of (m+2)-dimensional copula
    partials, with the lapse coordinate differenced at the lapse period."""
    m = params.m
    sigma = assemble_sigma_pair(params, j, k, s)
    F1, F1m, f1, d1 = _trip_scalars(trip1)
    F2, F2m, f2, d2 = _trip_scalars(trip2)
    atoms = np.asarray(atoms, dtype=float)

    if t <= m:
        base = np.ones(m)
        base[:t - 1] = atoms[:t - 1]
        lo = base.copy()
        lo[t - 1] = atoms[t - 1]
        lapse_variants = [(1.0, base), (-1.0, lo)]
    else:
        lapse_variants = [(1.0, atoms[:m].astype(float))]
    var1 = [(1.0, F1), (-1.0, F1m)] if d1 else [(1.0, F1)]
    var2 = [(1.0, F2), (-1.0, F2m)] if d2 else [(1.0, F2)]

    r = params.n_theta
    if want_score:
        dsigs = dsigma_pair_dtheta(params, j, k, s)
        active = [l for l in range(r) if np.any(dsigs[l] != 0.0)]
    num = 0.0
    dnum = np.zeros(r)
    for s_l, ul in lapse_variants:
        for s_1, u1 in var1:
            for s_2, u2 in var2:
                sign = s_l * s_1 * s_2
                u = np.concatenate([ul, [u1, u2]])
                if (not d1) and (not d2):
                    if want_score:
                        val, _ = cop.partial2_md_dir_deriv(
                            u, sigma, m, m + 1, np.zeros_like(sigma), tol=tol)
                        for l in active:
                            _, dv = cop.partial2_md_dir_deriv(
                                u, sigma, m, m + 1, dsigs[l], tol=tol)
                            dnum[l] += sign * dv
                    else:
                        val = cop.copula_partial2_md(u, sigma, m, m + 1,
                                                     tol=tol)
                elif (not d1) and d2:
                    if want_score:
                        val, _ = cop.partial_md_dir_deriv(
                            u, sigma, m, np.zeros_like(sigma), tol=tol)
                        for l in active:
                            _, dv = cop.partial_md_dir_deriv(
                                u, sigma, m, dsigs[l], tol=tol)
                            dnum[l] += sign * dv
                    else:
                        val = cop.copula_partial_md(u, sigma, m, tol=tol)
                elif d1 and (not d2):
                    if want_score:
                        val, _ = cop.partial_md_dir_deriv(
                            u, sigma, m + 1, np.zeros_like(sigma), tol=tol)
                        for l in active:
                            _, dv = cop.partial_md_dir_deriv(
                                u, sigma, m + 1, dsigs[l], tol=tol)
                            dnum[l] += sign * dv
                    else:
                        val = cop.copula_partial_md(u, sigma, m + 1, tol=tol)
                else:
                    if want_score:
                        val, _ = cop.copula_cdf_dir_deriv(
                            u, sigma, np.zeros_like(sigma), tol=tol)
                        for l in active:
                            _, dv = cop.copula_cdf_dir_deriv(
                                u, sigma, dsigs[l], tol=tol)
                            dnum[l] += sign * dv
                    else:
                        val = cop.copula_cdf(u, sigma, tol=tol)
                num += sign * val
    cont = 1.0
    if not d1:
        cont *= max(f1, DENSITY_FLOOR)
    if not d2:
        cont *= max(f2, DENSITY_FLOOR)
    return num, dnum, cont


def conditional_pair_density(trip1, trip2, j, k, s, t, atoms,
                             params: AssociationParams, method="auto",
                             tol=None):
    """Conditional hybrid density of the outcome pair at period s given lapse
    time T = t.  ``trip1``/``trip2`` are the (F, F-, f) marginal triples of
    the two observed outcomes at period s; ``atoms`` the per-period renewal
    probabilities F_L,u(0)."""
    m = params.m
    if not (1 <= s <= min(t, m)):
        raise ValueError("require 1 <= s <= min(t, m)")
    path = _resolve_method(method, params)
    denom = lapse_time_prob(t, atoms, params, method=path, tol=tol)
    if denom < DENSITY_FLOOR:
        raise NumericalError("conditioning probability underflowed")
    if path == "independence":
        r1 = params.rho_L[j]
        r2 = params.rho_L[k]
        r3 = params.rho_cross[j, k]
        logf, _ = _indep_cell_eval(trip1, trip2, s, t, float(atoms[s - 1]),
                                   r1, r2, r3)
        return math.exp(logf)
    num, _, cont = _general_cell(trip1, trip2, j, k, s, t, atoms, params,
                                 want_score=False, tol=tol)
    return max(num, 0.0) * cont / denom


def dropout_score(trip1, trip2, j, k, s, t_obs, atoms,
                  params: AssociationParams, method="auto", tol=None):
    """Score of the conditional pair log density in the full theta vector
    for a subject observed to have lapse time T = t_obs."""
    m = params.m
    if not (1 <= s <= min(t_obs, m)):
        raise ValueError("require 1 <= s <= min(t_obs, m)")
    path = _resolve_method(method, params)
    out = np.zeros(params.n_theta)
    if path == "independence":
        r1 = params.rho_L[j]
        r2 = params.rho_L[k]
        r3 = params.rho_cross[j, k]
        _, sc = _indep_cell_eval(trip1, trip2, s, t_obs,
                                 float(atoms[s - 1]), r1, r2, r3)
        pidx = params.p + params.pairs.index((min(j, k), max(j, k)))
        out[j] = sc[0]
        out[k] = sc[1]
        out[pidx] = sc[2]
        return out
    num, dnum, _ = _general_cell(trip1, trip2, j, k, s, t_obs, atoms, params,
                                 want_score=True, tol=tol)
    if num < DENSITY_FLOOR:
        logger.debug("dropout score floored at s=%d t=%d", s, t_obs)
        return out
    # the conditioning probability is free of the estimated correlations,
    # so its contribution to the score vanishes
    return dnum / num


# ---------------------------------------------------------------------------
# dataset-level machinery
# ---------------------------------------------------------------------------

@dataclass
class PairCells:
    """Flattened conditional-density cells for one outcome pair."""
    j: int
    k: int
    pair_idx: int
    subj: np.ndarray
    s: np.ndarray
    t: np.ndarray
    za: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    steq: np.ndarray
    lf1: np.ndarray
    lf2: np.ndarray
    logden: np.ndarray
    trip1: tuple = None
    trip2: tuple = None
    block: np.ndarray = None  # moment block id per cell


@dataclass
class DropoutData:
    """All cells plus layout metadata for the dropout GMM."""
    params: AssociationParams
    n_subjects: int
    T: np.ndarray
    atoms_by_subject: list
    pair_cells: list
    n_blocks: int
    block_labels: list
    underflow_count: int = 0

    @property
    def n_theta(self):
        return self.params.n_theta

    @property
    def n_moments(self):
        return self.n_blocks * self.n_theta


def build_dropout_data(T, atoms, U, UM, DENS, params: AssociationParams):
    """Assemble per-cell arrays from ragged panel evaluations.

    T: (n,) lapse times in 1..m+1.  atoms: (n, m) renewal probabilities
    F_L(0), valid for periods 1..min(T, m).  U/UM/DENS: (n, m, p) marginal
    triples for the outcomes, same validity.
    """
    T = np.asarray(T)
    n = T.size
    m = params.m
    p = params.p
    obs = np.minimum(T, m)
    pair_cells = []
    block_key = {}
    block_labels = []
    for pidx, (j, k) in enumerate(params.pairs):
        rows = {name: [] for name in
                ("subj", "s", "t", "za", "z1", "z2", "d1", "d2",
                 "steq", "lf1", "lf2", "logden")}
        for i in range(n):
            t_i = int(T[i])
            for s in range(1, int(obs[i]) + 1):
                a = float(atoms[i, s - 1])
                a = min(max(a, cop.U_CLAMP), 1.0 - cop.U_CLAMP)
                F1, Fm1, f1 = U[i, s - 1, j], UM[i, s - 1, j], DENS[i, s - 1, j]
                F2, Fm2, f2 = U[i, s - 1, k], UM[i, s - 1, k], DENS[i, s - 1, k]
                d1 = (F1 - Fm1) > 0
                d2 = (F2 - Fm2) > 0
                steq = (s == t_i)
                rows["subj"].append(i)
                rows["s"].append(s)
                rows["t"].append(t_i)
                rows["za"].append(_zc(a))
                rows["z1"].append(_zc(F1))
                rows["z2"].append(_zc(F2))
                rows["d1"].append(d1)
                rows["d2"].append(d2)
                rows["steq"].append(steq)
                rows["lf1"].append(0.0 if d1 else
                                   math.log(max(f1, DENSITY_FLOOR)))
                rows["lf2"].append(0.0 if d2 else
                                   math.log(max(f2, DENSITY_FLOOR)))
                rows["logden"].append(math.log(1.0 - a) if steq
                                      else math.log(a))
        cells = PairCells(
            j=j, k=k, pair_idx=pidx,
            subj=np.array(rows["subj"], dtype=np.int64),
            s=np.array(rows["s"], dtype=np.int64),
            t=np.array(rows["t"], dtype=np.int64),
            za=np.array(rows["za"]), z1=np.array(rows["z1"]),
            z2=np.array(rows["z2"]),
            d1=np.array(rows["d1"], dtype=bool),
            d2=np.array(rows["d2"], dtype=bool),
            steq=np.array(rows["steq"], dtype=bool),
            lf1=np.array(rows["lf1"]), lf2=np.array(rows["lf2"]),
            logden=np.array(rows["logden"]))
        block = np.empty(cells.subj.size, dtype=np.int64)
        for c in range(cells.subj.size):
            key = (pidx, int(cells.s[c]), int(cells.t[c]))
            if key not in block_key:
                block_key[key] = len(block_labels)
                block_labels.append(key)
            block[c] = block_key[key]
        cells.block = block
        pair_cells.append(cells)
    # empty (pair, s, t) cells carry no moment rows; note them
    expected = {(pidx, s, t)
                for pidx in range(len(params.pairs))
                for t in range(1, m + 2)
                for s in range(1, min(t, m) + 1)}
    missing = sorted(expected - set(block_key))
    if missing:
        logger.info("skipping %d empty score cells (no subjects): %s",
                    len(missing), missing)
    # keep marginal triples per subject for the general path
    atoms_list = [np.asarray(atoms[i, :int(obs[i])], dtype=float)
                  for i in range(n)]
    data = DropoutData(params=params, n_subjects=n, T=T.astype(int),
                       atoms_by_subject=atoms_list, pair_cells=pair_cells,
                       n_blocks=len(block_labels),
                       block_labels=block_labels)
    data._U, data._UM, data._DENS = U, UM, DENS
    return data


def _theta_components(data: DropoutData, pidx):
    j, k = data.params.pairs[pidx]
    return j, k, data.params.p + pidx


def _eval_pair_cells(data: DropoutData, cells: PairCells, theta):
    nc = cells.subj.size
    logf = np.empty(nc)
    score = np.empty((nc, 3))
    if data.params.is_temporal_independent:
        cj, ck, cc = _theta_components(data, cells.pair_idx)
        nflo = _k._indep_cells_eval(
            float(theta[cj]), float(theta[ck]), float(theta[cc]),
            cells.za, cells.z1, cells.z2, cells.d1, cells.d2, cells.steq,
            cells.lf1, cells.lf2, cells.logden, logf, score)
        data.underflow_count += int(nflo)
        return logf, score
    # general path: per-cell python evaluation
    params = data.params.with_theta(theta)
    m = params.m
    for c in range(nc):
        i = int(cells.subj[c])
        s = int(cells.s[c])
        t = int(cells.t[c])
        trip1 = (data._U[i, s - 1, cells.j], data._UM[i, s - 1, cells.j],
                 data._DENS[i, s - 1, cells.j])
        trip2 = (data._U[i, s - 1, cells.k], data._UM[i, s - 1, cells.k],
                 data._DENS[i, s - 1, cells.k])
        atoms = data.atoms_by_subject[i]
        num, dnum, cont = _general_cell(trip1, trip2, cells.j, cells.k, s, t,
                                        atoms, params, want_score=True)
        denom = lapse_time_prob(t, atoms, params, method="general")
        val = max(num, 0.0) * cont
        if val < DENSITY_FLOOR or denom < DENSITY_FLOOR:
            data.underflow_count += 1
            logf[c] = math.log(DENSITY_FLOOR)
            score[c] = 0.0
            continue
        logf[c] = math.log(val) - math.log(denom)
        cj, ck, cc = _theta_components(data, cells.pair_idx)
        score[c, 0] = dnum[cj] / num
        score[c, 1] = dnum[ck] / num
        score[c, 2] = dnum[cc] / num
    return logf, score


def composite_loglik(data: DropoutData, theta, want_grad=True):
    """Summed conditional log likelihood over all cells and its gradient."""
    total = 0.0
    grad = np.zeros(data.n_theta)
    for cells in data.pair_cells:
        logf, score = _eval_pair_cells(data, cells, theta)
        total += float(np.sum(logf))
        cj, ck, cc = _theta_components(data, cells.pair_idx)
        if want_grad:
            grad[cj] += float(np.sum(score[:, 0]))
            grad[ck] += float(np.sum(score[:, 1]))
            grad[cc] += float(np.sum(score[:, 2]))
    return total, grad


def subject_moments(data: DropoutData, theta):
    """(n, q) stacked dropout scores: one r-subvector per (pair, s, t) cell."""
    r = data.n_theta
    G = np.zeros((data.n_subjects, data.n_moments))
    for cells in data.pair_cells:
        _, score = _eval_pair_cells(data, cells, theta)
        cj, ck, cc = _theta_components(data, cells.pair_idx)
        base = cells.block * r
        G[cells.subj, base + cj] = score[:, 0]
        G[cells.subj, base + ck] = score[:, 1]
        G[cells.subj, base + cc] = score[:, 2]
    return G


def mean_moments(data: DropoutData, theta):
    r = data.n_theta
    out = np.zeros(data.n_moments)
    for cells in data.pair_cells:
        _, score = _eval_pair_cells(data, cells, theta)
        cj, ck, cc = _theta_components(data, cells.pair_idx)
        base = cells.block * r
        np.add.at(out, base + cj, score[:, 0])
        np.add.at(out, base + ck, score[:, 1])
        np.add.at(out, base + cc, score[:, 2])
    return out / data.n_subjects


def _psd_check(data: DropoutData):
    p = data.params.p

    def check(theta):
        M = np.eye(p + 1)
        M[0, 1:] = M[1:, 0] = theta[:p]
        for idx, (j, k) in enumerate(data.params.pairs):
            M[1 + j, 1 + k] = M[1 + k, 1 + j] = theta[p + idx]
        return np.linalg.eigvalsh(M)[0] >= 1e-8

    return check


def fit_dropout_pairwise(data: DropoutData, theta0=None):
    """Composite (pairwise-style) estimator: maximize the summed conditional
    log likelihood over all cells; used as the GMM starting value."""
    r = data.n_theta
    theta0 = np.zeros(r) if theta0 is None else np.asarray(theta0, float)
    psd = _psd_check(data)

    def neg(zv):
        th = np.tanh(zv)
        if not psd(th):
            return 1e12 * (1.0 + float(np.sum(zv * zv))), np.zeros(r)
        ll, grad = composite_loglik(data, th)
        # chain rule through theta = tanh(z)
        return -ll, -grad * (1.0 - th * th)

    res = optimize.minimize(neg, np.arctanh(np.clip(theta0, -0.99, 0.99)),
                            jac=True, method="L-BFGS-B",
                            options={"gtol": 1e-9, "ftol": 1e-14,
                                     "maxiter": 300})
    theta = np.tanh(res.x)
    _, grad = composite_loglik(data, theta)
    gnorm = float(np.max(np.abs(grad))) / max(data.n_subjects, 1)
    converged = bool(res.success or gnorm < 1e-7)
    if not converged:
        logger.warning("dropout composite fit: %s (grad %.2e)",
                       res.message, gnorm)
    return theta, {"converged": converged, "iterations": int(res.nit),
                   "grad_norm": gnorm, "loglik": -float(res.fun)}


def fit_dropout_gmm(data: DropoutData, theta_init=None) -> GmmResult:
    """One-step GMM over the stacked dropout scores (all pairs and all
    (s, t) cells present), weight fixed at the composite estimate."""
    if theta_init is None:
        theta_init, _ = fit_dropout_pairwise(data)
    res = gmm_minimize(
        lambda th: mean_moments(data, th),
        lambda th: subject_moments(data, th),
        theta_init, data.n_subjects,
        theta_labels=data.params.theta_labels,
        psd_check=_psd_check(data))
    res.diagnostics["underflow_count"] = data.underflow_count
    res.diagnostics["theta_init"] = np.asarray(theta_init).tolist()
    return res
