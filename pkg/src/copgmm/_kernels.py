"""Scalar numeric kernels for the hot paths.

Everything here is written in a numba-compilable subset of Python and is
decorated through :func:`copgmm._backend.jit`, so the same source runs either
compiled (default) or interpreted (``COPGMM_NUMBA=0``).  Public, array-aware
wrappers live in :mod:`copgmm.mvnorm` and :mod:`copgmm.tweedie`.

Contents: standard normal cdf/pdf/inverse, regularized incomplete gamma,
bivariate normal cdf (Genz's quadrature of the Drezner-Wesolowsky kind),
trivariate normal cdf (conditioning quadrature), quasi-Monte-Carlo
multivariate normal cdf, and the Tweedie compound Poisson-gamma series.
"""
import math

import numpy as np

from ._backend import jit

SQRT2 = math.sqrt(2.0)
SQRT_TWOPI = math.sqrt(2.0 * math.pi)
TWOPI = 2.0 * math.pi

# Gauss-Legendre rules on [-1, 1] used by the trivariate quadrature.
_GL10_X, _GL10_W = np.polynomial.legendre.leggauss(10)
_GL20_X, _GL20_W = np.polynomial.legendre.leggauss(20)


@jit
def norm_pdf(z):
    return math.exp(-0.5 * z * z) / SQRT_TWOPI


@jit
def norm_cdf(z):
    return 0.5 * math.erfc(-z / SQRT2)


@jit
def norm_ppf(u):
    """Inverse standard normal cdf, Wichura's AS 241 (double precision)."""
    if u <= 0.0:
        return -np.inf
    if u >= 1.0:
        return np.inf
    q = u - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = u
    else:
        r = 1.0 - u
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        val = -val
    return val


@jit
def gammainc_reg(a, x):
    """Regularized lower incomplete gamma P(a, x), a > 0, x >= 0."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        # power series
        ap = a
        summ = 1.0 / a
        delt = summ
        for _ in range(1000):
            ap += 1.0
            delt *= x / ap
            summ += delt
            if abs(delt) < abs(summ) * 1e-16:
                break
        return summ * math.exp(-x + a * math.log(x) - math.lgamma(a))
    # continued fraction for Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delt = d * c
        h *= delt
        if abs(delt - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    res = 1.0 - q
    if res < 0.0:
        res = 0.0
    return res


# ---------------------------------------------------------------------------
# bivariate normal cdf
# ---------------------------------------------------------------------------

_BVN_W1 = np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904])
_BVN_X1 = np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970])
_BVN_W2 = np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                    0.2031674267230659, 0.2334925365383547, 0.2491470458134029])
_BVN_X2 = np.array([-0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
                    -0.5873179542866171, -0.3678314989981802, -0.1252334085114692])
_BVN_W3 = np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                    0.1527533871307259])
_BVN_X3 = np.array([-0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
                    -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
                    -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
                    -0.07652652113349733])


@jit
def _bvnu(dh, dk, r):
    """P(X > dh, Y > dk) for standard bivariate normal, Genz's algorithm."""
    if dh == np.inf or dk == np.inf:
        return 0.0
    if dh == -np.inf:
        if dk == -np.inf:
            return 1.0
        return norm_cdf(-dk)
    if dk == -np.inf:
        return norm_cdf(-dh)
    if r == 0.0:
        return norm_cdf(-dh) * norm_cdf(-dk)
    if r >= 1.0:
        return norm_cdf(-max(dh, dk))
    if r <= -1.0:
        v = norm_cdf(-dh) - norm_cdf(dk)
        return v if v > 0.0 else 0.0

    if abs(r) < 0.3:
        w = _BVN_W1
        x = _BVN_X1
    elif abs(r) < 0.75:
        w = _BVN_W2
        x = _BVN_X2
    else:
        w = _BVN_W3
        x = _BVN_X3
    lg = w.shape[0]

    h = dh
    k = dk
    hk = h * k
    bvn = 0.0
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        for i in range(lg):
            for isg in (-1.0, 1.0):
                sn = math.sin(asr * (isg * x[i] + 1.0) / 2.0)
                bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / (2.0 * TWOPI)
        bvn += norm_cdf(-h) * norm_cdf(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        asq = (1.0 - r) * (1.0 + r)
        a = math.sqrt(asq)
        bs = (h - k) * (h - k)
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / asq + hk) / 2.0
        if asr > -100.0:
            bvn = (a * math.exp(asr)
                   * (1.0 - c * (bs - asq) * (1.0 - d * bs / 5.0) / 3.0
                      + c * d * asq * asq / 5.0))
        if -hk < 100.0:
            b = math.sqrt(bs)
            bvn -= (math.exp(-hk / 2.0) * SQRT_TWOPI * norm_cdf(-b / a) * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0))
        a = a / 2.0
        for i in range(lg):
            for isg in (-1.0, 1.0):
                xs = a * (isg * x[i] + 1.0)
                xs = xs * xs
                rs = math.sqrt(1.0 - xs)
                asr = -(bs / xs + hk) / 2.0
                if asr > -100.0:
                    bvn += (a * w[i] * math.exp(asr)
                            * (math.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                               - (1.0 + c * xs * (1.0 + d * xs))))
        bvn = -bvn / TWOPI
        if r > 0.0:
            bvn += norm_cdf(-max(h, k))
        else:
            bvn = -bvn
            if k > h:
                if h < 0.0:
                    bvn += norm_cdf(k) - norm_cdf(h)
                else:
                    bvn += norm_cdf(-h) - norm_cdf(-k)
    if bvn < 0.0:
        bvn = 0.0
    if bvn > 1.0:
        bvn = 1.0
    return bvn


@jit
def bvn_cdf(h, k, r):
    """P(X <= h, Y <= k) for standard bivariate normal with correlation r."""
    return _bvnu(-h, -k, r)


@jit
def _bvn_cdf_batch(h, k, r, out):
    for i in range(h.shape[0]):
        out[i] = _bvnu(-h[i], -k[i], r[i])


# ---------------------------------------------------------------------------
# trivariate normal cdf: conditioning quadrature
# ---------------------------------------------------------------------------

@jit
def _tvn_core(b1, b2, b3, r12, r13, r23, gx, gw):
    """Integrate phi(t)*Phi2 over t in (-inf, b1] with the given panel rule."""
    lo = -8.75
    hi = b1
    if hi > 8.75:
        hi = 8.75
    if hi <= lo:
        return 0.0
    s12 = math.sqrt(max(1.0 - r12 * r12, 1e-24))
    s13 = math.sqrt(max(1.0 - r13 * r13, 1e-24))
    rc = (r23 - r12 * r13) / (s12 * s13)
    if rc > 1.0:
        rc = 1.0
    if rc < -1.0:
        rc = -1.0
    npan = int((hi - lo) / 1.2) + 1
    if npan > 16:
        npan = 16
    wpan = (hi - lo) / npan
    total = 0.0
    for ip in range(npan):
        a0 = lo + ip * wpan
        mid = a0 + 0.5 * wpan
        half = 0.5 * wpan
        for q in range(gx.shape[0]):
            t = mid + half * gx[q]
            w2 = (b2 - r12 * t) / s12
            w3 = (b3 - r13 * t) / s13
            total += gw[q] * half * norm_pdf(t) * _bvnu(-w2, -w3, rc)
    return total


@jit
def tvn_cdf(b1, b2, b3, r12, r13, r23):
    """P(X1 <= b1, X2 <= b2, X3 <= b3), standard trivariate normal.

    Conditions on the coordinate with the smallest upper limit and integrates
    the conditional bivariate cdf with a composite Gauss-Legendre rule.
    """
    # infinite limits reduce the dimension
    if b1 == -np.inf or b2 == -np.inf or b3 == -np.inf:
        return 0.0
    if b1 == np.inf:
        return _bvnu(-b2, -b3, r23)
    if b2 == np.inf:
        return _bvnu(-b1, -b3, r13)
    if b3 == np.inf:
        return _bvnu(-b1, -b2, r12)
    return _tvn_inner(b1, b2, b3, r12, r13, r23, _GL20_X, _GL20_W)


@jit
def tvn_cdf_with_error(b1, b2, b3, r12, r13, r23):
    if b1 == -np.inf or b2 == -np.inf or b3 == -np.inf:
        return 0.0, 0.0
    if b1 == np.inf or b2 == np.inf or b3 == np.inf:
        return tvn_cdf(b1, b2, b3, r12, r13, r23), 1e-15
    if b2 <= b1 and b2 <= b3:
        b1, b2 = b2, b1
        r13, r23 = r23, r13
    elif b3 <= b1 and b3 <= b2:
        b1, b3 = b3, b1
        r12, r23 = r23, r12
    coarse = _tvn_core(b1, b2, b3, r12, r13, r23, _GL10_X, _GL10_W)
    fine = _tvn_core(b1, b2, b3, r12, r13, r23, _GL20_X, _GL20_W)
    return fine, abs(fine - coarse)


# ---------------------------------------------------------------------------
# quadrivariate normal cdf: one more conditioning layer over tvn
# ---------------------------------------------------------------------------

@jit
def _qvn_core(b, R, gx, gw, gx_in, gw_in):
    lo = -8.75
    hi = b[0]
    if hi > 8.75:
        hi = 8.75
    if hi <= lo:
        return 0.0
    s = np.empty(3)
    for i in range(3):
        s[i] = math.sqrt(max(1.0 - R[0, i + 1] * R[0, i + 1], 1e-24))
    rc = np.empty(3)  # conditional correlations (12), (13), (23) of the rest
    idx = 0
    for i in range(1, 4):
        for j in range(i + 1, 4):
            v = (R[i, j] - R[0, i] * R[0, j]) / (s[i - 1] * s[j - 1])
            if v > 1.0:
                v = 1.0
            if v < -1.0:
                v = -1.0
            rc[idx] = v
            idx += 1
    npan = int((hi - lo) / 1.75) + 1
    if npan > 12:
        npan = 12
    wpan = (hi - lo) / npan
    total = 0.0
    for ip in range(npan):
        a0 = lo + ip * wpan
        mid = a0 + 0.5 * wpan
        half = 0.5 * wpan
        for q in range(gx.shape[0]):
            t = mid + half * gx[q]
            w1 = (b[1] - R[0, 1] * t) / s[0]
            w2 = (b[2] - R[0, 2] * t) / s[1]
            w3 = (b[3] - R[0, 3] * t) / s[2]
            inner = _tvn_inner(w1, w2, w3, rc[0], rc[1], rc[2], gx_in, gw_in)
            total += gw[q] * half * norm_pdf(t) * inner
    return total


@jit
def _tvn_inner(b1, b2, b3, r12, r13, r23, gx, gw):
    # tvn with conditioning on the tightest coordinate
    if b1 == -np.inf or b2 == -np.inf or b3 == -np.inf:
        return 0.0
    if b2 <= b1 and b2 <= b3:
        b1, b2 = b2, b1
        r13, r23 = r23, r13
    elif b3 <= b1 and b3 <= b2:
        b1, b3 = b3, b1
        r12, r23 = r23, r12
    return _tvn_core(b1, b2, b3, r12, r13, r23, gx, gw)


@jit
def qvn_cdf_with_error(b, R):
    """4-dimensional normal cdf by nested conditioning quadrature."""
    # condition on the tightest coordinate
    order = np.argsort(b)
    bp = b[order]
    Rp = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            Rp[i, j] = R[order[i], order[j]]
    fine = _qvn_core(bp, Rp, _GL20_X, _GL20_W, _GL20_X, _GL20_W)
    coarse = _qvn_core(bp, Rp, _GL10_X, _GL10_W, _GL20_X, _GL20_W)
    err = abs(fine - coarse)
    if fine < 0.0:
        fine = 0.0
    if fine > 1.0:
        fine = 1.0
    return fine, err


# ---------------------------------------------------------------------------
# quasi-Monte-Carlo multivariate normal cdf (Genz separation of variables)
# ---------------------------------------------------------------------------

@jit
def _mvn_qmc_kernel(b, chol, pts):
    """Separation-of-variables integrand over prepared QMC point sets.

    ``pts`` has shape (n_scrambles, n_points, d-1); returns the per-scramble
    estimates of P(X <= b) for X ~ N(0, chol @ chol.T).
    """
    d = b.shape[0]
    ns = pts.shape[0]
    npts = pts.shape[1]
    vals = np.empty(ns)
    y = np.empty(d)
    l00 = chol[0, 0]
    if l00 > 1e-12:
        e1 = norm_cdf(b[0] / l00)
    else:
        e1 = 1.0 if b[0] >= 0.0 else 0.0
    for s in range(ns):
        acc = 0.0
        for ipt in range(npts):
            prod = e1
            e = e1
            for j in range(1, d):
                u = e * pts[s, ipt, j - 1]
                if u < 1e-15:
                    u = 1e-15
                elif u > 1.0 - 1e-15:
                    u = 1.0 - 1e-15
                y[j - 1] = norm_ppf(u)
                num = b[j]
                for kk in range(j):
                    num -= chol[j, kk] * y[kk]
                ljj = chol[j, j]
                if ljj > 1e-12:
                    e = norm_cdf(num / ljj)
                else:
                    e = 1.0 if num >= 0.0 else 0.0
                prod *= e
            acc += prod
        vals[s] = acc / npts
    return vals


# ---------------------------------------------------------------------------
# Tweedie compound Poisson-gamma, 1 < power < 2
# ---------------------------------------------------------------------------

@jit
def tweedie_logpzero(mu, phi, power):
    return -mu ** (2.0 - power) / (phi * (2.0 - power))


@jit
def tweedie_logpdf(y, mu, phi, power):
    """Log density at y > 0 by the Dunn-Smyth series expansion.

    The dominant index of the series is located first; terms are added on
    both sides until they fall below 1e-12 of the running sum.
    """
    p = power
    alpha = (2.0 - p) / (1.0 - p)  # negative for 1 < p < 2
    logz = (-alpha * math.log(y) + alpha * math.log(p - 1.0)
            - (1.0 - alpha) * math.log(phi) - math.log(2.0 - p))
    jmax = y ** (2.0 - p) / (phi * (2.0 - p))
    j0 = int(jmax + 0.5)
    if j0 < 1:
        j0 = 1
    logw0 = j0 * logz - math.lgamma(j0 + 1.0) - math.lgamma(-alpha * j0)
    total = 1.0
    # upward
    j = j0 + 1
    while j < j0 + 200000:
        t = math.exp(j * logz - math.lgamma(j + 1.0) - math.lgamma(-alpha * j)
                     - logw0)
        total += t
        if t < total * 1e-12:
            break
        j += 1
    # downward
    j = j0 - 1
    while j >= 1:
        t = math.exp(j * logz - math.lgamma(j + 1.0) - math.lgamma(-alpha * j)
                     - logw0)
        total += t
        if t < total * 1e-12:
            break
        j -= 1
    theta = mu ** (1.0 - p) / (1.0 - p)
    kappa = mu ** (2.0 - p) / (2.0 - p)
    return math.log(total) + logw0 - math.log(y) + (y * theta - kappa) / phi


@jit
def tweedie_cdf_scalar(y, mu, phi, power):
    """P(Y <= y) for y >= 0: atom at zero plus the Poisson-gamma mixture.

    Each series term integrates in closed form through the regularized
    incomplete gamma function, so this is the term-by-term integral of the
    series density.
    """
    if y < 0.0:
        return 0.0
    p = power
    lam = mu ** (2.0 - p) / (phi * (2.0 - p))
    atom = math.exp(-lam)
    if y == 0.0:
        return atom
    gam = (2.0 - p) / (p - 1.0)
    scale = phi * (p - 1.0) * mu ** (p - 1.0)
    x = y / scale
    loglam = math.log(lam)
    j0 = int(lam)
    if j0 < 1:
        j0 = 1
    logp0 = j0 * loglam - lam - math.lgamma(j0 + 1.0)
    total = 0.0
    j = j0
    while j < j0 + 200000:
        lp = j * loglam - lam - math.lgamma(j + 1.0)
        if lp < logp0 - 37.0:
            break
        total += math.exp(lp) * gammainc_reg(j * gam, x)
        j += 1
    j = j0 - 1
    while j >= 1:
        lp = j * loglam - lam - math.lgamma(j + 1.0)
        if lp < logp0 - 37.0:
            break
        total += math.exp(lp) * gammainc_reg(j * gam, x)
        j -= 1
    res = atom + total
    if res > 1.0:
        res = 1.0
    return res


@jit
def tweedie_quantile_scalar(u, mu, phi, power):
    """Inverse cdf by bracketed bisection plus safeguarded Newton."""
    lam = mu ** (2.0 - power) / (phi * (2.0 - power))
    atom = math.exp(-lam)
    if u <= atom:
        return 0.0
    lo = 0.0
    hi = mu
    for _ in range(200):
        if tweedie_cdf_scalar(hi, mu, phi, power) >= u:
            break
        lo = hi
        hi *= 2.0
    # bisection to a decent bracket
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if tweedie_cdf_scalar(mid, mu, phi, power) < u:
            lo = mid
        else:
            hi = mid
    y = 0.5 * (lo + hi)
    # Newton polish, kept inside the bracket
    for _ in range(40):
        f = tweedie_cdf_scalar(y, mu, phi, power) - u
        if f > 0.0:
            hi = y
        else:
            lo = y
        dens = math.exp(tweedie_logpdf(y, mu, phi, power))
        if dens <= 0.0:
            y = 0.5 * (lo + hi)
            continue
        step = f / dens
        ynew = y - step
        if ynew <= lo or ynew >= hi:
            ynew = 0.5 * (lo + hi)
        if abs(ynew - y) < 1e-9 * max(1.0, y):
            y = ynew
            break
        y = ynew
    return y


@jit
def _tweedie_cdf_batch(y, mu, phi, power, out):
    for i in range(y.shape[0]):
        out[i] = tweedie_cdf_scalar(y[i], mu[i], phi, power)


@jit
def _tweedie_logpdf_batch(y, mu, phi, power, out):
    for i in range(y.shape[0]):
        if y[i] > 0.0:
            out[i] = tweedie_logpdf(y[i], mu[i], phi, power)
        else:
            out[i] = tweedie_logpzero(mu[i], phi, power)


@jit
def _tweedie_quantile_batch(u, mu, phi, power, out):
    for i in range(u.shape[0]):
        out[i] = tweedie_quantile_scalar(u[i], mu[i], phi, power)


# ---------------------------------------------------------------------------
# dropout-conditional cells under temporal independence
#
# Coordinates (L, Y_j, Y_k) with correlations r1 = corr(L, j), r2 = corr(L, k),
# r3 = corr(j, k).  Each cell is one conditional pair observation at period s
# given the lapse time; the conditional density reduces to trivariate copula
# quantities divided by the period-s renewal (or lapse) probability.
# ---------------------------------------------------------------------------

_LOG_FLOOR = -690.77552789821368  # log(1e-300)


@jit
def _phi2_s(z1, z2, rho):
    om = 1.0 - rho * rho
    q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * om)
    return math.exp(-q) / (TWOPI * math.sqrt(om))


@jit
def _h12(x1, x2, r):
    return norm_pdf(x1) * norm_cdf((x2 - r * x1) / math.sqrt(1.0 - r * r))


@jit
def _h2_tri(xa, xb, xc, rab, rac, rbc):
    """d/d rab of Phi3(xa, xb, xc): phi2 times the conditional cdf of c."""
    det = 1.0 - rab * rab
    w1 = (rac - rab * rbc) / det
    w2 = (rbc - rab * rac) / det
    mu = w1 * xa + w2 * xb
    s2 = 1.0 - (rac * w1 + rbc * w2)
    s = math.sqrt(max(s2, 1e-24))
    return _phi2_s(xa, xb, rab) * norm_cdf((xc - mu) / s)


@jit
def _dlogc2(z1, z2, rho):
    om = 1.0 - rho * rho
    return (rho * om - rho * (z1 * z1 + z2 * z2)
            + (1.0 + rho * rho) * z1 * z2) / (om * om)


@jit
def _indep_cells_eval(r1, r2, r3, za, z1, z2, d1, d2, steq, lf1, lf2,
                      logden, logf, score):
    """Log conditional density and its (r1, r2, r3) score for every cell.

    d1/d2 flag discrete (zero) outcomes, steq flags cells with s = t (the
    lapse period itself), lf1/lf2 carry the continuous log densities (zero
    for discrete coordinates) and logden the log of the conditioning
    probability.  Returns the count of floored cells.
    """
    n = za.shape[0]
    s1 = math.sqrt(1.0 - r1 * r1)
    s2 = math.sqrt(1.0 - r2 * r2)
    s3 = math.sqrt(1.0 - r3 * r3)
    det3 = 1.0 - r3 * r3
    nflo = 0
    for i in range(n):
        a = za[i]
        x = z1[i]
        y = z2[i]
        if d1[i] and d2[i]:
            t3 = tvn_cdf(a, x, y, r1, r2, r3)
            g1 = _h2_tri(a, x, y, r1, r2, r3)
            g2 = _h2_tri(a, y, x, r2, r1, r3)
            g3 = _h2_tri(x, y, a, r3, r1, r2)
            if steq[i]:
                num = bvn_cdf(x, y, r3) - t3
                n1 = -g1
                n2 = -g2
                n3 = _phi2_s(x, y, r3) - g3
            else:
                num = t3
                n1, n2, n3 = g1, g2, g3
        elif (not d1[i]) and d2[i]:
            # continuous j, zero k: partial in the j coordinate
            xa = (a - r1 * x) / s1
            x2 = (y - r3 * x) / s3
            rc = (r2 - r1 * r3) / (s1 * s3)
            if rc > 1.0:
                rc = 1.0
            elif rc < -1.0:
                rc = -1.0
            dmd = bvn_cdf(xa, x2, rc)
            p2 = _phi2_s(xa, x2, rc)
            g2 = p2 / (s1 * s3)
            g1 = (_h12(xa, x2, rc) * (a * r1 - x) / s1 ** 3
                  + p2 * (r2 * r1 - r3) / (s1 ** 3 * s3))
            g3 = (_h12(x2, xa, rc) * (y * r3 - x) / s3 ** 3
                  + p2 * (r2 * r3 - r1) / (s1 * s3 ** 3))
            if steq[i]:
                w = (y - r3 * x) / s3
                first = norm_cdf(w)
                dfirst = norm_pdf(w) * (r3 * y - x) / s3 ** 3
                num = first - dmd
                n1 = -g1
                n2 = -g2
                n3 = dfirst - g3
            else:
                num = dmd
                n1, n2, n3 = g1, g2, g3
        elif d1[i] and (not d2[i]):
            # zero j, continuous k: partial in the k coordinate
            xa = (a - r2 * y) / s2
            x1 = (x - r3 * y) / s3
            rc = (r1 - r2 * r3) / (s2 * s3)
            if rc > 1.0:
                rc = 1.0
            elif rc < -1.0:
                rc = -1.0
            dmd = bvn_cdf(xa, x1, rc)
            p2 = _phi2_s(xa, x1, rc)
            g1 = p2 / (s2 * s3)
            g2 = (_h12(xa, x1, rc) * (a * r2 - y) / s2 ** 3
                  + p2 * (r1 * r2 - r3) / (s2 ** 3 * s3))
            g3 = (_h12(x1, xa, rc) * (x * r3 - y) / s3 ** 3
                  + p2 * (r1 * r3 - r2) / (s2 * s3 ** 3))
            if steq[i]:
                w = (x - r3 * y) / s3
                first = norm_cdf(w)
                dfirst = norm_pdf(w) * (r3 * x - y) / s3 ** 3
                num = first - dmd
                n1 = -g1
                n2 = -g2
                n3 = dfirst - g3
            else:
                num = dmd
                n1, n2, n3 = g1, g2, g3
        else:
            # both continuous: copula density times conditional lapse cdf
            w1c = (r1 - r2 * r3) / det3
            w2c = (r2 - r1 * r3) / det3
            mua = w1c * x + w2c * y
            sa2 = 1.0 - (r1 * w1c + r2 * w2c)
            sa = math.sqrt(max(sa2, 1e-24))
            W = (a - mua) / sa
            PW = norm_cdf(W)
            pw = norm_pdf(W)
            logc2 = (-0.5 * math.log(det3)
                     - (r3 * r3 * (x * x + y * y) - 2.0 * r3 * x * y)
                     / (2.0 * det3))
            dlc2 = _dlogc2(x, y, r3)
            dmu1 = (x - r3 * y) / det3
            ds21 = -2.0 * (r1 - r3 * r2) / det3
            dW1 = -(sa2 * dmu1 + 0.5 * (a - mua) * ds21) / sa ** 3
            dmu2 = (y - r3 * x) / det3
            ds22 = -2.0 * (r2 - r3 * r1) / det3
            dW2 = -(sa2 * dmu2 + 0.5 * (a - mua) * ds22) / sa ** 3
            dmu3 = -(w1c * (y - r3 * x) + w2c * (x - r3 * y)) / det3
            ds23 = 2.0 * w1c * w2c
            dW3 = -(sa2 * dmu3 + 0.5 * (a - mua) * ds23) / sa ** 3
            if steq[i]:
                q = 1.0 - PW
                if q < 1e-300:
                    logf[i] = _LOG_FLOOR
                    score[i, 0] = 0.0
                    score[i, 1] = 0.0
                    score[i, 2] = 0.0
                    nflo += 1
                    continue
                logf[i] = logc2 + math.log(q) + lf1[i] + lf2[i] - logden[i]
                score[i, 0] = -pw * dW1 / q
                score[i, 1] = -pw * dW2 / q
                score[i, 2] = dlc2 - pw * dW3 / q
            else:
                if PW < 1e-300:
                    logf[i] = _LOG_FLOOR
                    score[i, 0] = 0.0
                    score[i, 1] = 0.0
                    score[i, 2] = 0.0
                    nflo += 1
                    continue
                logf[i] = logc2 + math.log(PW) + lf1[i] + lf2[i] - logden[i]
                score[i, 0] = pw * dW1 / PW
                score[i, 1] = pw * dW2 / PW
                score[i, 2] = dlc2 + pw * dW3 / PW
            continue
        if num < 1e-300:
            logf[i] = _LOG_FLOOR
            score[i, 0] = 0.0
            score[i, 1] = 0.0
            score[i, 2] = 0.0
            nflo += 1
        else:
            logf[i] = math.log(num) + lf1[i] + lf2[i] - logden[i]
            score[i, 0] = n1 / num
            score[i, 1] = n2 / num
            score[i, 2] = n3 / num
    return nflo


@jit
def _norm_cdf_batch(z, out):
    for i in range(z.shape[0]):
        out[i] = norm_cdf(z[i])


@jit
def _norm_ppf_batch(u, out):
    for i in range(u.shape[0]):
        out[i] = norm_ppf(u[i])
