"""Temporal loading matrices and block association matrices.

Latent normal scores follow nu = Psi @ eta with iid innovations eta; Psi is
unit-diagonal lower triangular (identity, AR(1) powers, or a single MA(1)
subdiagonal).  Cross-stream correlations couple innovations of the same
period only, which yields the block association matrix with diagonal blocks
Psi_a Psi_a' and off blocks rho_ab Psi_a Psi_b'.
"""
from dataclasses import dataclass, field, replace

import numpy as np

INDEPENDENCE = "independence"
AR1 = "ar1"
MA1 = "ma1"
_KINDS = (INDEPENDENCE, AR1, MA1)


@dataclass(frozen=True)
class TemporalSpec:
    """One stream's temporal structure: kind, scalar coefficient, horizon m."""
    kind: str = INDEPENDENCE
    psi: float = 0.0
    m: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"TemporalSpec: unknown kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("TemporalSpec: horizon m must be >= 1")
        if self.kind == AR1 and not abs(self.psi) < 1.0:
            raise ValueError("TemporalSpec: AR(1) requires |psi| < 1")

    @property
    def is_independent(self):
        return self.kind == INDEPENDENCE or self.psi == 0.0


def build_psi(spec: TemporalSpec) -> np.ndarray:
    """Lower-triangular m x m loading matrix with unit diagonal."""
    m = spec.m
    psi = np.eye(m)
    if spec.kind == AR1:
        for t in range(m):
            for s in range(t):
                psi[t, s] = spec.psi ** (t - s)
    elif spec.kind == MA1:
        for t in range(1, m):
            psi[t, t - 1] = spec.psi
    return psi


def _pair_list(p):
    return [(j, k) for j in range(p) for k in range(j + 1, p)]


@dataclass(frozen=True)
class AssociationParams:
    """Association parameter set: lapse-outcome and cross-outcome correlations
    plus the temporal structure of each stream.

    rho_L[j] couples lapse with outcome j; rho_cross is a symmetric p x p
    matrix whose (j, k) entry couples outcomes j and k (diagonal ignored).
    The estimated theta vector stacks [rho_L, rho_cross pairs in lex order];
    temporal coefficients are structural and not part of theta.
    """
    rho_L: np.ndarray
    rho_cross: np.ndarray
    temporal_lapse: TemporalSpec = field(default_factory=TemporalSpec)
    temporal_outcomes: tuple = ()

    def __post_init__(self):
        rho_L = np.atleast_1d(np.asarray(self.rho_L, dtype=float))
        object.__setattr__(self, "rho_L", rho_L)
        p = rho_L.size
        rc = np.asarray(self.rho_cross, dtype=float)
        if rc.ndim == 0:
            if p != 2:
                raise ValueError("scalar rho_cross only valid for p = 2")
            mat = np.zeros((2, 2))
            mat[0, 1] = mat[1, 0] = float(rc)
            rc = mat
        if rc.shape != (p, p):
            raise ValueError("rho_cross must be a p x p matrix")
        if not np.allclose(rc, rc.T, atol=1e-12):
            raise ValueError("rho_cross must be symmetric")
        object.__setattr__(self, "rho_cross", rc)
        touts = self.temporal_outcomes
        if not touts:
            touts = tuple(TemporalSpec(m=self.temporal_lapse.m)
                          for _ in range(p))
        if len(touts) != p:
            raise ValueError("temporal_outcomes must have one spec per outcome")
        object.__setattr__(self, "temporal_outcomes", tuple(touts))
        ms = {self.temporal_lapse.m} | {t.m for t in touts}
        if len(ms) != 1:
            raise ValueError("all temporal specs must share the horizon m")
        allrho = np.concatenate([rho_L, rc[np.triu_indices(p, 1)]])
        if np.any(np.abs(allrho) >= 1.0):
            raise ValueError("all correlations must lie in (-1, 1)")

    @property
    def p(self):
        return self.rho_L.size

    @property
    def m(self):
        return self.temporal_lapse.m

    @property
    def is_temporal_independent(self):
        return (self.temporal_lapse.is_independent
                and all(t.is_independent for t in self.temporal_outcomes))

    @property
    def pairs(self):
        return _pair_list(self.p)

    @property
    def n_theta(self):
        return self.p + len(self.pairs)

    @property
    def theta(self):
        """[rho_L1..rho_Lp, rho_jk for j<k in lex order]."""
        cross = np.array([self.rho_cross[j, k] for j, k in self.pairs])
        return np.concatenate([self.rho_L, cross])

    @property
    def theta_labels(self):
        lab = [f"rho_L{j + 1}" for j in range(self.p)]
        lab += [f"rho_{j + 1}{k + 1}" for j, k in self.pairs]
        return lab

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_theta:
            raise ValueError("theta has the wrong length")
        p = self.p
        rc = np.zeros((p, p))
        for idx, (j, k) in enumerate(self.pairs):
            rc[j, k] = rc[k, j] = theta[p + idx]
        return replace(self, rho_L=theta[:p].copy(), rho_cross=rc)


def _check_psd(sigma, tol, context):
    w = np.linalg.eigvalsh(sigma)
    if w[0] < -tol:
        raise ValueError(
            f"association matrix not PSD ({context}; min eigenvalue {w[0]:.3e})")


def assemble_sigma_full(params: AssociationParams, p=None, m=None) -> np.ndarray:
    """Full m(p+1)-dimensional association matrix, streams ordered
    (lapse, outcome 1, ..., outcome p), each with its m periods."""
    p = params.p if p is None else p
    m = params.m if m is None else m
    if p != params.p or m != params.m:
        raise ValueError("p, m must match the parameter set")
    psis = [build_psi(params.temporal_lapse)]
    psis += [build_psi(t) for t in params.temporal_outcomes]
    nstream = p + 1
    sigma = np.zeros((nstream * m, nstream * m))
    for a in range(nstream):
        for b in range(nstream):
            if a == b:
                rho = 1.0
            elif a == 0:
                rho = params.rho_L[b - 1]
            elif b == 0:
                rho = params.rho_L[a - 1]
            else:
                rho = params.rho_cross[a - 1, b - 1]
            block = rho * psis[a] @ psis[b].T
            sigma[a * m:(a + 1) * m, b * m:(b + 1) * m] = block
    _check_psd(sigma, 1e-10, "full matrix; check the rho matrix PSD")
    return sigma


def assemble_sigma_pair(params: AssociationParams, j, k, s, m=None) -> np.ndarray:
    """(m+2)-dimensional association matrix for (L_1..L_m, Y_j at s, Y_k at s).

    This is the principal submatrix of the full block matrix at those
    coordinates; the outcome diagonal entries are the squared norms of the
    s-th rows of Psi_j, Psi_k (exactly 1 under temporal independence).
    """
    m = params.m if m is None else m
    if not 1 <= s <= m:
        raise ValueError("require 1 <= s <= m")
    if j == k:
        raise ValueError("outcomes j, k must differ")
    psi_l = build_psi(params.temporal_lapse)
    row_j = build_psi(params.temporal_outcomes[j])[s - 1]
    row_k = build_psi(params.temporal_outcomes[k])[s - 1]
    sigma = np.zeros((m + 2, m + 2))
    sigma[:m, :m] = psi_l @ psi_l.T
    sigma[:m, m] = params.rho_L[j] * psi_l @ row_j
    sigma[:m, m + 1] = params.rho_L[k] * psi_l @ row_k
    sigma[m, :m] = sigma[:m, m]
    sigma[m + 1, :m] = sigma[:m, m + 1]
    sigma[m, m] = row_j @ row_j
    sigma[m + 1, m + 1] = row_k @ row_k
    sigma[m, m + 1] = sigma[m + 1, m] = params.rho_cross[j, k] * row_j @ row_k
    _check_psd(sigma, 1e-10,
               f"pair (j={j}, k={k}, s={s}) with rho_Lj={params.rho_L[j]}, "
               f"rho_Lk={params.rho_L[k]}, rho_jk={params.rho_cross[j, k]}, "
               f"psi_L={params.temporal_lapse.psi}")
    return sigma


def dsigma_pair_dtheta(params: AssociationParams, j, k, s, m=None) -> np.ndarray:
    """Derivative of the pair association matrix in each theta direction.

    Returns an (n_theta, m+2, m+2) array; only the rho_Lj, rho_Lk and rho_jk
    slices are nonzero since temporal loadings are not estimated.
    """
    m = params.m if m is None else m
    psi_l = build_psi(params.temporal_lapse)
    row_j = build_psi(params.temporal_outcomes[j])[s - 1]
    row_k = build_psi(params.temporal_outcomes[k])[s - 1]
    out = np.zeros((params.n_theta, m + 2, m + 2))
    dj = out[j]
    dj[:m, m] = psi_l @ row_j
    dj[m, :m] = dj[:m, m]
    dk = out[k]
    dk[:m, m + 1] = psi_l @ row_k
    dk[m + 1, :m] = dk[:m, m + 1]
    idx = params.p + params.pairs.index((min(j, k), max(j, k)))
    dc = out[idx]
    dc[m, m + 1] = dc[m + 1, m] = row_j @ row_k
    return out
