"""Asymptotic covariance of the marginal-parameter estimators.

For the semiparametric estimator the efficient score subtracts, from the
raw per-parameter score, its projection onto the copula-perturbation
directions. With a fitted copula density c-hat and pseudo-observations
u-hat, that projection is an ordinary least-squares regression of the
negative raw score onto basis functions phi_k(u)/c-hat(u), where each
phi_k is a cosine tensor product with all frequencies >= 1. Zero-integral
slices keep every perturbation tangent to the uniform-marginals manifold,
so the side constraint holds structurally rather than via a multiplier.

The covariance itself is the inverse empirical second moment of the
assembled scores. For the parametric estimators the same assembly runs
with the copula's own finite-dimensional score instead of the sieve
projection; for the QMLE the copula term is absent entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copulas import Copula, IndependenceCopula
from .estimate import FitResult, _BetaMap, JointModelSpec, IndependenceAssumed, pseudo_observations
from .exceptions import SingularInformationError
from .sieve import SieveCopula

__all__ = [
    "CosineTensorSieve",
    "fit_gstar",
    "asymptotic_covariance",
    "qmle_avar",
    "parametric_avar",
    "are",
    "score_matrix",
]

DENSITY_FLOOR = 1e-12
RIDGE_SCALE = 1e-10
COND_LIMIT = 1e12
_CHUNK = 20_000


@dataclass(frozen=True)
class CosineTensorSieve:
    """Tensor-product cosine expansion sum_k coeff_k prod_l cos(k_l pi u_l).

    Frequencies run over {1, ..., K}^m; with no zero frequency every basis
    function integrates to zero over the cube and over each axis slice.
    """

    frequencies: int
    dim: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.size != self.frequencies**self.dim:
            raise ValueError("coefficient count must be K^m")
        object.__setattr__(self, "coeffs", coeffs)

    @staticmethod
    def basis(u: np.ndarray, frequencies: int) -> np.ndarray:
        """Design matrix (n, K^m) of all tensor cosine terms at points u."""
        n, m = u.shape
        k = np.arange(1, frequencies + 1)
        out = np.cos(np.pi * u[:, 0:1] * k)
        for l in range(1, m):
            nxt = np.cos(np.pi * u[:, l : l + 1] * k)
            out = (out[:, :, None] * nxt[:, None, :]).reshape(n, -1)
        return out

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return self.basis(u, self.frequencies) @ self.coeffs


def _marginal_score_columns(fit: FitResult, data: np.ndarray):
    """Raw per-observation d loglik / d beta split into the marginal-score
    part and the copula-entry part (d log c / du_j times dF_j/d beta)."""
    spec = JointModelSpec(tuple(fit.marginals_hat), IndependenceAssumed(), fit.shared)
    bmap = _BetaMap(spec)
    n = data.shape[0]
    score_part = np.zeros((n, bmap.n_beta))
    cdf_part = []  # per marginal: (n, p_j) dF/d beta columns mapped to slots
    for j, marg in enumerate(fit.marginals_hat):
        col = data[:, j]
        sc = marg.score(col)
        grad = marg.cdf_param_grad(col)
        for k in range(marg.n_params):
            score_part[:, bmap.slot_maps[j][k]] += sc[:, k]
        cdf_part.append(grad)
    return bmap, score_part, cdf_part


def score_matrix(fit: FitResult, data, *, dlogc: np.ndarray | None = None) -> np.ndarray:
    """Per-observation score of the joint log-likelihood in beta.

    ``dlogc`` is the matrix of d log c / d u_j at the pseudo-observations;
    omit it (or pass None) for the independence/QMLE case.
    """
    data = np.asarray(data, dtype=float)
    bmap, score_part, cdf_part = _marginal_score_columns(fit, data)
    if dlogc is None:
        return score_part
    out = score_part
    for j, grad in enumerate(cdf_part):
        for k in range(grad.shape[1]):
            out[:, bmap.slot_maps[j][k]] += dlogc[:, j] * grad[:, k]
    return out


def _invert_information(second_moment: np.ndarray) -> np.ndarray:
    sym = 0.5 * (second_moment + second_moment.T)
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals.min() <= 0.0 or not np.all(np.isfinite(eigvals)):
        raise SingularInformationError(
            f"score second moment is not positive definite (min eig {eigvals.min():.3e})"
        )
    inv = np.linalg.inv(sym)
    return 0.5 * (inv + inv.T)


def fit_gstar(
    fit: FitResult, data, frequencies: int = 10, *, raw_scores: np.ndarray | None = None
) -> list[CosineTensorSieve]:
    """Least-squares projection coefficients for each beta entry.

    Regresses the negative raw score column onto the functions
    phi_k(u-hat)/c-hat(u-hat). The Gram matrix accumulates in chunks, with
    a small ridge added when it is severely ill-conditioned. ``raw_scores``
    overrides the internally assembled per-observation scores.
    """
    data = np.asarray(data, dtype=float)
    u = pseudo_observations(fit.marginals_hat, data)
    chat = _fitted_copula_density(fit, u)
    if raw_scores is None:
        dlogc = _fitted_dlogdensity(fit, u)
        raw = score_matrix(fit, data, dlogc=dlogc)
    else:
        raw = np.asarray(raw_scores, dtype=float)
    n, m = u.shape
    p = raw.shape[1]
    kdim = frequencies**m
    gram = np.zeros((kdim, kdim))
    xty = np.zeros((kdim, p))
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        x = CosineTensorSieve.basis(u[start:stop], frequencies)
        x = x / chat[start:stop, None]
        gram += x.T @ x
        xty += x.T @ (-raw[start:stop])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        gram = gram + RIDGE_SCALE * np.trace(gram) * np.eye(kdim)
        if np.linalg.cond(gram) > 1e15:
            raise SingularInformationError("projection design is rank deficient")
    coeffs = np.linalg.solve(gram, xty)
    return [CosineTensorSieve(frequencies, m, coeffs[:, q]) for q in range(p)]


def _fitted_copula_density(fit: FitResult, u: np.ndarray) -> np.ndarray:
    dep = fit.dependence_hat
    if dep is None or isinstance(dep, IndependenceCopula):
        return np.ones(u.shape[0])
    dens = dep.density(u)
    return np.maximum(dens, DENSITY_FLOOR)


def _fitted_dlogdensity(fit: FitResult, u: np.ndarray) -> np.ndarray | None:
    dep = fit.dependence_hat
    if dep is None or isinstance(dep, IndependenceCopula):
        return None
    return dep.dlogdensity_du(u)


def asymptotic_covariance(
    fit: FitResult, data, gstar: list[CosineTensorSieve] | None = None
) -> np.ndarray:
    """Inverse empirical second moment of the assembled efficient scores.

    With ``gstar`` fitted, each score column gains its g*_q(u-hat)/c-hat
    correction; without it this is the plain (QMLE-style) inverse outer
    product of raw scores.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    u = pseudo_observations(fit.marginals_hat, data)
    dlogc = _fitted_dlogdensity(fit, u)
    scores = score_matrix(fit, data, dlogc=dlogc)
    if gstar is not None:
        chat = _fitted_copula_density(fit, u)
        for q, g in enumerate(gstar):
            scores[:, q] += g(u) / chat
    second = scores.T @ scores / n
    return _invert_information(second)


def qmle_avar(fit: FitResult, *, analytic: bool = True, data=None) -> np.ndarray:
    """QMLE asymptotic covariance: inverse marginal Fisher information.

    The information is block diagonal across marginals; sharing adds the
    blocks of pooled slots. ``analytic=False`` falls back to the empirical
    outer product of scores (requires data).
    """
    spec = JointModelSpec(tuple(fit.marginals_hat), IndependenceAssumed(), fit.shared)
    bmap = _BetaMap(spec)
    if not analytic:
        if data is None:
            raise ValueError("empirical QMLE avar needs the data")
        return asymptotic_covariance(fit, data, gstar=None)
    p = bmap.n_beta
    info = np.zeros((p, p))
    for j, marg in enumerate(fit.marginals_hat):
        block = marg.fisher_information()
        idx = bmap.slot_maps[j]
        for a in range(marg.n_params):
            for b in range(marg.n_params):
                info[idx[a], idx[b]] += block[a, b]
    return _invert_information(info)


def parametric_avar(fit: FitResult, data) -> np.ndarray:
    """FMLE/PMLE covariance: beta block of the inverse joint information.

    The joint score stacks the analytic beta scores with the copula
    parameter scores (central differences of the copula log density in
    unconstrained coordinates, mapped back through the parameter jacobian).
    The beta block of the inverse captures the penalty for estimating the
    dependence parameters alongside the marginals.
    """
    data = np.asarray(data, dtype=float)
    copula = fit.dependence_hat
    if not isinstance(copula, Copula):
        raise ValueError("parametric_avar needs a fitted parametric copula")
    n = data.shape[0]
    u = pseudo_observations(fit.marginals_hat, data)
    dlogc = None if isinstance(copula, IndependenceCopula) else copula.dlogdensity_du(u)
    beta_scores = score_matrix(fit, data, dlogc=dlogc)
    p = beta_scores.shape[1]
    r = copula.n_params
    if r == 0:
        second = beta_scores.T @ beta_scores / n
        return _invert_information(second)
    # copula scores taken in unconstrained coordinates; the beta block of
    # the inverse joint information is invariant to any smooth
    # reparameterization of the nuisance block, so no jacobian is needed
    x0 = copula.to_unconstrained()
    cop_scores = np.empty((n, r))
    for t in range(r):
        h = 1e-6 * max(1.0, abs(x0[t]))
        xp = x0.copy()
        xp[t] += h
        xm = x0.copy()
        xm[t] -= h
        cp = copula.with_params(copula.from_unconstrained(xp))
        cm = copula.with_params(copula.from_unconstrained(xm))
        cop_scores[:, t] = (cp.log_density(u) - cm.log_density(u)) / (2.0 * h)
    joint = np.hstack([beta_scores, cop_scores])
    second = joint.T @ joint / n
    inv = _invert_information(second)
    return inv[:p, :p]


def are(avar_base: np.ndarray, avar_alt: np.ndarray) -> np.ndarray:
    """Per-parameter relative efficiency diag(alt)/diag(base).

    With the base being the QMLE, values below one are efficiency gains of
    the alternative estimator.
    """
    avar_base = np.asarray(avar_base, dtype=float)
    avar_alt = np.asarray(avar_alt, dtype=float)
    if avar_base.shape != avar_alt.shape:
        raise ValueError("covariance matrices must have matching shapes")
    return np.diag(avar_alt) / np.diag(avar_base)
