"""Gaussian copula kernels: cdf, partial derivatives (h-functions) and all
association-parameter derivatives.

Conventions
-----------
* An association matrix ``sigma`` may carry non-unit diagonal entries (block
  products of temporal loadings); every kernel normalizes it internally to
  the correlation matrix R(sigma) = D^{-1/2} sigma D^{-1/2}.
* Copula arguments equal to 1 marginalize the coordinate (treated as +inf);
  any argument equal to 0 sends a cdf to 0.  Arguments of differentiated
  coordinates are clamped into [1e-12, 1 - 1e-12] before the normal quantile
  transform, since fitted marginals can return 0/1 at extreme covariates.
* ``rho_index`` arguments identify one symmetric off-diagonal entry of
  ``sigma``; derivatives are with respect to that entry (moving both (a,b)
  and (b,a)), diagonal entries held fixed.
"""
import math

import numpy as np

from . import _kernels as _k
from .mvnorm import mvn_cdf, std_normal_quantile

U_CLAMP = 1e-12


def clamp_u(u):
    return min(max(float(u), U_CLAMP), 1.0 - U_CLAMP)


def corr_from_assoc(sigma):
    """R(sigma): rescale an association matrix to unit diagonal."""
    sigma = np.asarray(sigma, dtype=float)
    d = np.sqrt(np.diag(sigma))
    if np.any(d <= 0):
        raise ValueError("association matrix needs positive diagonal entries")
    return sigma / np.outer(d, d)


def dcorr_from_assoc(sigma, dsigma):
    """Directional derivative of R(sigma) along a symmetric dsigma."""
    sigma = np.asarray(sigma, dtype=float)
    dsigma = np.asarray(dsigma, dtype=float)
    d = np.sqrt(np.diag(sigma))
    R = sigma / np.outer(d, d)
    rel = np.diag(dsigma) / np.diag(sigma)
    dR = dsigma / np.outer(d, d) - 0.5 * R * (rel[:, None] + rel[None, :])
    np.fill_diagonal(dR, 0.0)
    return dR


def _z_from_u(u):
    """Normal scores; u=1 -> +inf (drop), u=0 -> -inf (probability zero)."""
    u = np.asarray(u, dtype=float)
    z = np.empty(u.shape)
    for i, ui in enumerate(u):
        if ui >= 1.0:
            z[i] = np.inf
        elif ui <= 0.0:
            z[i] = -np.inf
        else:
            z[i] = _k.norm_ppf(ui)
    return z


def copula_cdf(u, sigma, tol=None):
    """Gaussian copula cdf C(u; sigma) = Phi_d(Phi^{-1}(u); R(sigma))."""
    z = _z_from_u(u)
    R = corr_from_assoc(sigma)
    val, _ = mvn_cdf(z, R, tol=tol, validate=False)
    return val


# ---------------------------------------------------------------------------
# bivariate pieces
# ---------------------------------------------------------------------------

def copula_h1(u1, u2, rho):
    """C_2(u1, u2) = dC/du2: conditional probability P(U1 <= u1 | U2 = u2)."""
    if not abs(rho) < 1.0:
        raise ValueError("copula_h1 is degenerate at |rho| = 1")
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    return _k.norm_cdf((z1 - rho * z2) / math.sqrt(1.0 - rho * rho))


def copula_density2(u1, u2, rho):
    """Bivariate Gaussian copula density c(u1, u2; rho)."""
    if not abs(rho) < 1.0:
        raise ValueError("copula_density2 is degenerate at |rho| = 1")
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    om = 1.0 - rho * rho
    q = (rho * rho * (z1 * z1 + z2 * z2) - 2.0 * rho * z1 * z2) / (2.0 * om)
    return math.exp(-q) / math.sqrt(om)


def drho_copula_cdf2(u1, u2, rho):
    """Plackett: dC(u1, u2)/drho = phi2(z1, z2; rho)."""
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    return _phi2(z1, z2, rho)


def _phi2(z1, z2, rho):
    om = 1.0 - rho * rho
    if om <= 0.0:
        raise ValueError("phi2 degenerate at |rho| = 1")
    q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * om)
    return math.exp(-q) / (2.0 * math.pi * math.sqrt(om))


def drho_copula_h(u1, u2, rho):
    """d/drho of C_2(u1, u2) = Phi((z1 - rho z2)/sqrt(1 - rho^2))."""
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    om = 1.0 - rho * rho
    w = (z1 - rho * z2) / math.sqrt(om)
    return _k.norm_pdf(w) * (rho * z1 - z2) / om ** 1.5


def dlog_copula_density2(u1, u2, rho):
    """d/drho of log c(u1, u2; rho)."""
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    om = 1.0 - rho * rho
    return (rho * om - rho * (z1 * z1 + z2 * z2)
            + (1.0 + rho * rho) * z1 * z2) / (om * om)


# ---------------------------------------------------------------------------
# h-functions of the multivariate normal
# ---------------------------------------------------------------------------

def _phi_d_general(a, V, tol=None):
    """Phi_{|a|}(a; V) for a mean-zero normal with covariance V (not
    necessarily a correlation matrix); handles infinite coordinates."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 1.0
    if np.any(np.isneginf(a)):
        return 0.0
    keep = ~np.isposinf(a)
    a = a[keep]
    if a.size == 0:
        return 1.0
    V = np.asarray(V, dtype=float)[np.ix_(keep, keep)]
    s = np.sqrt(np.diag(V))
    if np.any(s <= 0):
        # degenerate coordinate: conditional variance collapsed
        s = np.maximum(s, 1e-12)
    R = V / np.outer(s, s)
    np.fill_diagonal(R, 1.0)
    R = np.clip(R, -1.0, 1.0)
    val, _ = mvn_cdf(a / s, R, tol=tol, validate=False)
    return val


def h1_d(x, R, k, tol=None):
    """d/dx_k of Phi_d(x; R): phi(x_k) times the conditional cdf of the rest."""
    x = np.asarray(x, dtype=float)
    R = np.asarray(R, dtype=float)
    d = x.size
    if d == 1:
        return _k.norm_pdf(x[0])
    rest = [i for i in range(d) if i != k]
    r = R[rest, k]
    a = x[rest] - r * x[k]
    V = R[np.ix_(rest, rest)] - np.outer(r, r)
    return _k.norm_pdf(x[k]) * _phi_d_general(a, V, tol=tol)


def h2_d(x, sigma, i, j, tol=None):
    """d/dR_ij of Phi_d(x; R(sigma)): phi2 at (x_i, x_j) times the
    conditional cdf of the remaining coordinates (Plackett's identity)."""
    x = np.asarray(x, dtype=float)
    R = corr_from_assoc(sigma)
    d = x.size
    if i == j:
        raise ValueError("h2_d needs two distinct coordinates")
    rho = R[i, j]
    val2 = _phi2(x[i], x[j], rho)
    rest = [t for t in range(d) if t not in (i, j)]
    if not rest:
        return val2
    lam = np.array([[1.0, rho], [rho, 1.0]])
    lam_inv = np.linalg.inv(lam)
    C = R[np.ix_(rest, [i, j])]
    a = x[rest] - C @ lam_inv @ x[[i, j]]
    V = R[np.ix_(rest, rest)] - C @ lam_inv @ C.T
    return val2 * _phi_d_general(a, V, tol=tol)


# ---------------------------------------------------------------------------
# partial copula functions (conditional cdfs) and their rho-derivatives
# ---------------------------------------------------------------------------

def _cond_pieces(z, R, cond):
    """Residual arguments and conditional covariance given coordinates cond."""
    d = z.size
    rest = [i for i in range(d) if i not in cond]
    lam = R[np.ix_(cond, cond)]
    lam_inv = np.linalg.inv(lam)
    C = R[np.ix_(rest, cond)]
    mu = C @ lam_inv @ z[cond]
    a = z[rest] - mu
    V = R[np.ix_(rest, rest)] - C @ lam_inv @ C.T
    return rest, lam_inv, C, a, V


def copula_partial_md(u, sigma, j, tol=None):
    """dC/du_j for a d-dimensional Gaussian copula: the conditional
    (d-1)-dimensional cdf given the normal score of coordinate j."""
    u = np.asarray(u, dtype=float)
    z = _z_from_u(u)
    z[j] = std_normal_quantile(clamp_u(u[j]))
    R = corr_from_assoc(sigma)
    if u.size == 1:
        return 1.0
    _, _, _, a, V = _cond_pieces(z, R, [j])
    return _phi_d_general(a, V, tol=tol)


def copula_partial2_md(u, sigma, j, k, tol=None):
    """d2C/du_j du_k: bivariate copula density at the (j, k) pair times the
    conditional cdf of the remaining coordinates."""
    u = np.asarray(u, dtype=float)
    z = _z_from_u(u)
    z[j] = std_normal_quantile(clamp_u(u[j]))
    z[k] = std_normal_quantile(clamp_u(u[k]))
    R = corr_from_assoc(sigma)
    rho = R[j, k]
    c2 = copula_density2(u[j], u[k], rho)
    if u.size == 2:
        return c2
    _, _, _, a, V = _cond_pieces(z, R, [j, k])
    return c2 * _phi_d_general(a, V, tol=tol)


def _dphi_cond_dir(z, R, cond, dR, tol=None):
    """Value and directional derivative of the conditional normal cdf.

    Computes Phi(a; V) for a, V the residual arguments/covariance after
    conditioning R on coordinates ``cond`` at scores z[cond], together with
    its derivative when R moves along the symmetric direction dR.  The chain
    rule runs through the rescaled arguments and the induced correlations,
    with h1/h2 terms evaluated on the normalized conditional law.
    """
    rest, lam_inv, C, a, V = _cond_pieces(z, R, cond)
    nr = len(rest)
    if nr == 0:
        return 1.0, 0.0
    if np.any(np.isneginf(a)):
        return 0.0, 0.0

    dlam = dR[np.ix_(cond, cond)]
    dC = dR[np.ix_(rest, cond)]
    dlam_inv = -lam_inv @ dlam @ lam_inv
    zc = z[cond]
    dmu = dC @ lam_inv @ zc + C @ dlam_inv @ zc
    da = -dmu
    dV = (dR[np.ix_(rest, rest)] - dC @ lam_inv @ C.T
          - C @ dlam_inv @ C.T - C @ lam_inv @ dC.T)

    # drop marginalized coordinates: they contribute neither value nor slope
    keep = ~np.isposinf(a)
    a_k = a[keep]
    da_k = da[keep]
    V_k = V[np.ix_(keep, keep)]
    dV_k = dV[np.ix_(keep, keep)]
    nk = a_k.size
    if nk == 0:
        return 1.0, 0.0

    s = np.sqrt(np.maximum(np.diag(V_k), 1e-24))
    ds = np.diag(dV_k) / (2.0 * s)
    astar = a_k / s
    dastar = da_k / s - a_k * ds / (s * s)
    Rstar = V_k / np.outer(s, s)
    np.fill_diagonal(Rstar, 1.0)
    Rstar = np.clip(Rstar, -1.0, 1.0)
    dRstar = dV_k / np.outer(s, s) - Rstar * (np.add.outer(ds / s, ds / s)) / 1.0
    # the diagonal of Rstar is constant
    np.fill_diagonal(dRstar, 0.0)

    val, _ = mvn_cdf(astar, Rstar, tol=tol, validate=False)
    dval = 0.0
    for i in range(nk):
        if dastar[i] != 0.0:
            dval += h1_d(astar, Rstar, i, tol=tol) * dastar[i]
    for i in range(nk):
        for l in range(i + 1, nk):
            if dRstar[i, l] != 0.0:
                dval += h2_d(astar, Rstar, i, l, tol=tol) * dRstar[i, l]
    return val, dval


def _unit_dsigma(d, rho_index):
    a, b = rho_index
    if a == b:
        raise ValueError("rho_index must name an off-diagonal entry")
    ds = np.zeros((d, d))
    ds[a, b] = ds[b, a] = 1.0
    return ds


def copula_cdf_dir_deriv(u, sigma, dsigma, tol=None):
    """(C(u; sigma), dC along dsigma): Plackett terms over moving entries."""
    u = np.asarray(u, dtype=float)
    z = _z_from_u(u)
    sigma = np.asarray(sigma, dtype=float)
    R = corr_from_assoc(sigma)
    dR = dcorr_from_assoc(sigma, dsigma)
    if np.any(np.isneginf(z)):
        return 0.0, 0.0
    keep = np.where(~np.isposinf(z))[0]
    if keep.size == 0:
        return 1.0, 0.0
    zk = z[keep]
    Rk = R[np.ix_(keep, keep)]
    sk = sigma[np.ix_(keep, keep)]
    dRk = dR[np.ix_(keep, keep)]
    val, _ = mvn_cdf(zk, Rk, tol=tol, validate=False)
    dval = 0.0
    for i in range(keep.size):
        for l in range(i + 1, keep.size):
            if dRk[i, l] != 0.0:
                dval += h2_d(zk, sk, i, l, tol=tol) * dRk[i, l]
    return val, dval


def drho_copula_cdf(u, sigma, rho_index, tol=None):
    """dC/d sigma_ab for one symmetric off-diagonal entry of sigma."""
    dsig = _unit_dsigma(np.asarray(u).size, rho_index)
    return copula_cdf_dir_deriv(u, sigma, dsig, tol=tol)[1]


def partial_md_dir_deriv(u, sigma, j, dsigma, tol=None):
    """(dC/du_j, its directional derivative along dsigma)."""
    u = np.asarray(u, dtype=float)
    z = _z_from_u(u)
    z[j] = std_normal_quantile(clamp_u(u[j]))
    R = corr_from_assoc(sigma)
    dR = dcorr_from_assoc(sigma, dsigma)
    return _dphi_cond_dir(z, R, [j], dR, tol=tol)


def drho_partial_copula(u, sigma, j, rho_index, tol=None):
    """d/d sigma_ab of the partial copula dC/du_j."""
    dsig = _unit_dsigma(np.asarray(u).size, rho_index)
    return partial_md_dir_deriv(u, sigma, j, dsig, tol=tol)[1]


def partial2_md_dir_deriv(u, sigma, j, k, dsigma, tol=None):
    """(d2C/du_j du_k, its directional derivative along dsigma)."""
    u = np.asarray(u, dtype=float)
    z = _z_from_u(u)
    z[j] = std_normal_quantile(clamp_u(u[j]))
    z[k] = std_normal_quantile(clamp_u(u[k]))
    sigma = np.asarray(sigma, dtype=float)
    R = corr_from_assoc(sigma)
    dR = dcorr_from_assoc(sigma, dsigma)
    rho = R[j, k]
    drho = dR[j, k]
    c2 = copula_density2(u[j], u[k], rho)
    dc2 = c2 * dlog_copula_density2(u[j], u[k], rho) * drho
    if u.size == 2:
        return c2, dc2
    cval, cder = _dphi_cond_dir(z, R, [j, k], dR, tol=tol)
    return c2 * cval, dc2 * cval + c2 * cder


def drho_partial2_copula(u, sigma, j, k, rho_index, tol=None):
    """d/d sigma_ab of the double partial d2C/du_j du_k."""
    dsig = _unit_dsigma(np.asarray(u).size, rho_index)
    return partial2_md_dir_deriv(u, sigma, j, k, dsig, tol=tol)[1]


# ---------------------------------------------------------------------------
# explicit trivariate formulas (cross-checks of the general machinery)
# ---------------------------------------------------------------------------

def _h12(x1, x2, r):
    return _k.norm_pdf(x1) * _k.norm_cdf((x2 - r * x1) / math.sqrt(1.0 - r * r))


def trivariate_dpartial_drho(u1, u2, u3, r12, r13, r23, wrt):
    """d/d rho_wrt of dC(u1,u2,u3)/du3 from the closed trivariate expansion.

    ``wrt`` is one of "12", "13", "23".
    """
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    z3 = std_normal_quantile(clamp_u(u3))
    s1 = math.sqrt(1.0 - r13 * r13)
    s2 = math.sqrt(1.0 - r23 * r23)
    rx = (r12 - r13 * r23) / (s1 * s2)
    z1s = (z1 - r13 * z3) / s1
    z2s = (z2 - r23 * z3) / s2
    if wrt == "12":
        dz1s = 0.0
        dz2s = 0.0
        drx = 1.0 / (s1 * s2)
    elif wrt == "13":
        dz1s = (z1 * r13 - z3) / s1 ** 3
        dz2s = 0.0
        drx = (r12 * r13 - r23) / (s1 ** 3 * s2)
    elif wrt == "23":
        dz1s = 0.0
        dz2s = (z2 * r23 - z3) / s2 ** 3
        drx = (r12 * r23 - r13) / (s1 * s2 ** 3)
    else:
        raise ValueError("wrt must be '12', '13' or '23'")
    return (_h12(z1s, z2s, rx) * dz1s + _h12(z2s, z1s, rx) * dz2s
            + _phi2(z1s, z2s, rx) * drx)


def trivariate_dpartial2_drho(u1, u2, u3, r12, r13, r23, wrt):
    """d/d rho_wrt of d2C(u1,u2,u3)/du2 du3 from the closed trivariate
    expansion (conditioning coordinate 1 on coordinates 2 and 3)."""
    z1 = std_normal_quantile(clamp_u(u1))
    z2 = std_normal_quantile(clamp_u(u2))
    z3 = std_normal_quantile(clamp_u(u3))
    lam = np.array([[1.0, r23], [r23, 1.0]])
    lam_inv = np.linalg.inv(lam)
    cvec = np.array([r12, r13])
    zc = np.array([z2, z3])
    mu = cvec @ lam_inv @ zc
    sig = 1.0 - cvec @ lam_inv @ cvec
    c2 = copula_density2(u2, u3, r23)
    E = np.array([[0.0, 1.0], [1.0, 0.0]])
    if wrt == "12":
        dmu = np.array([1.0, 0.0]) @ lam_inv @ zc
        dsig = -2.0 * np.array([1.0, 0.0]) @ lam_inv @ cvec
        dc2 = 0.0
    elif wrt == "13":
        dmu = np.array([0.0, 1.0]) @ lam_inv @ zc
        dsig = -2.0 * np.array([0.0, 1.0]) @ lam_inv @ cvec
        dc2 = 0.0
    elif wrt == "23":
        dlam_inv = -lam_inv @ E @ lam_inv
        dmu = cvec @ dlam_inv @ zc
        dsig = -cvec @ dlam_inv @ cvec
        dc2 = c2 * dlog_copula_density2(u2, u3, r23)
    else:
        raise ValueError("wrt must be '12', '13' or '23'")
    ssig = math.sqrt(sig)
    w = (z1 - mu) / ssig
    dw = -(sig * dmu + 0.5 * (z1 - mu) * dsig) / sig ** 1.5
    return dc2 * _k.norm_cdf(w) + c2 * _k.norm_pdf(w) * dw
