"""Gaussian marginal log-likelihood and its gradients for one group.

With responses y, mean mu, random-effect design Z, random-effect covariance
G, and residual variances r on the diagonal of R, the group's marginal
covariance is

    Sigma = Z G Z' + diag(r)

and the log-likelihood is

    l = -0.5 * (n log(2 pi) + log det Sigma + s' Sigma^{-1} s),  s = y - mu.

Gradients, with a = Sigma^{-1} s:
    dl/dmu         = a
    dl/dG          = -0.5 * (Z' Sigma^{-1} Z - r_vec r_vec'),  r_vec = Z' a
    dl/dL          = 2 * (dl/dG) L, lower triangle      (G = L L')
    dl/dr_j        = -0.5 * ((Sigma^{-1})_jj - a_j^2)
    dl/dlog r_j    = dl/dr_j * r_j
    dl/dsigma2     = sum_j dl/dr_j                      (pooled residual variance)

Everything goes through one Cholesky factorization of Sigma per group; solves
reuse the factor and no explicit inverse of Sigma is formed except the
factor-based solve against the identity needed for diag(Sigma^{-1}). When the
factorization fails, a small diagonal jitter proportional to the mean of
diag(Sigma) is added and doubled up to three times before giving up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, SingularCovarianceError

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER_SCALE = 1e-8
JITTER_RETRIES = 3


def marginal_covariance(Z: np.ndarray, G: np.ndarray, r_diag: np.ndarray) -> np.ndarray:
    """Sigma = Z G Z' + diag(r_diag) for one group."""
    Z = np.asarray(Z, dtype=float)
    G = np.asarray(G, dtype=float)
    r = np.asarray(r_diag, dtype=float)
    if Z.ndim != 2:
        raise DataError("Z must be a matrix")
    n, q = Z.shape
    if G.shape != (q, q):
        raise DataError(f"G must be {q}x{q} to match Z")
    if r.shape != (n,):
        raise DataError(f"r_diag must have length {n}")
    return Z @ G @ Z.T + np.diag(r)


def chol_with_jitter(Sigma: np.ndarray, group_id=None):
    """Cholesky factor of Sigma, retrying with growing diagonal jitter.

    Returns (factor, lower) as produced by scipy's cho_factor. Raises
    SingularCovarianceError naming the group when all retries fail.
    """
    try:
        return cho_factor(Sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_SCALE * float(np.mean(np.diag(Sigma)))
    if jitter <= 0.0 or not np.isfinite(jitter):
        jitter = JITTER_SCALE
    eye = np.eye(Sigma.shape[0])
    for _ in range(JITTER_RETRIES):
        try:
            return cho_factor(Sigma + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise SingularCovarianceError(
        f"marginal covariance for group {group_id!r} is not positive definite "
        f"after jitter retries"
    )


def group_loglik(y: np.ndarray, mu: np.ndarray, Sigma: np.ndarray, group_id=None) -> float:
    """Gaussian log-density of one group under mean mu and covariance Sigma."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    n = y.shape[0]
    if mu.shape != (n,):
        raise DataError("mu must match y in length")
    if Sigma.shape != (n, n):
        raise DataError("Sigma must be square matching y")
    factor = chol_with_jitter(Sigma, group_id)
    s = y - mu
    alpha = cho_solve(factor, s, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return -0.5 * (n * LOG_2PI + logdet + float(s @ alpha))


def grad_mean(y, mu, Sigma, group_id=None) -> np.ndarray:
    """dl/dmu = Sigma^{-1} (y - mu)."""
    factor = chol_with_jitter(np.asarray(Sigma, dtype=float), group_id)
    s = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    return cho_solve(factor, s, check_finite=False)


def grad_group_cov(y, mu, Z, Sigma, group_id=None) -> np.ndarray:
    """dl/dG = -0.5 (Z' Sigma^{-1} Z - r r') with r = Z' Sigma^{-1} (y - mu)."""
    Z = np.asarray(Z, dtype=float)
    factor = chol_with_jitter(np.asarray(Sigma, dtype=float), group_id)
    s = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    alpha = cho_solve(factor, s, check_finite=False)
    SinvZ = cho_solve(factor, Z, check_finite=False)
    r_vec = Z.T @ alpha
    return -0.5 * (Z.T @ SinvZ - np.outer(r_vec, r_vec))


def grad_cov_factor(y, mu, Z, L, r_diag, group_id=None) -> np.ndarray:
    """dl/dL = 2 (dl/dG) L for G = L L', zeroed above the diagonal."""
    L = np.asarray(L, dtype=float)
    Sigma = marginal_covariance(Z, L @ L.T, r_diag)
    dG = grad_group_cov(y, mu, Z, Sigma, group_id)
    return np.tril(2.0 * dG @ L)


def grad_resid_var(y, mu, Sigma, group_id=None) -> np.ndarray:
    """dl/dr_j = -0.5 ((Sigma^{-1})_jj - (Sigma^{-1} s)_j^2), per observation."""
    Sigma = np.asarray(Sigma, dtype=float)
    factor = chol_with_jitter(Sigma, group_id)
    s = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    alpha = cho_solve(factor, s, check_finite=False)
    Sinv_diag = np.diag(cho_solve(factor, np.eye(Sigma.shape[0]), check_finite=False))
    return -0.5 * (Sinv_diag - alpha**2)


def grad_log_resid_var(y, mu, Sigma, r_diag, group_id=None) -> np.ndarray:
    """Chain rule through r = exp(log r): dl/dlog r_j = dl/dr_j * r_j."""
    return grad_resid_var(y, mu, Sigma, group_id) * np.asarray(r_diag, dtype=float)


def grad_resid_var_pooled(y, mu, Sigma, group_id=None) -> float:
    """dl/dsigma2 for one shared residual variance: sum of per-observation grads."""
    return float(np.sum(grad_resid_var(y, mu, Sigma, group_id)))


@dataclass(frozen=True)
class GradientSet:
    """All gradients needed for one boosting step on one group."""

    mean: np.ndarray            # (n_i,) dl/dmu
    cov_factor: np.ndarray      # (q, q) dl/dL, lower triangular
    log_resid_var: np.ndarray   # (n_i,) dl/dlog r
    loglik: float


def group_gradients(y, mu, Z, L, r_diag, group_id=None) -> GradientSet:
    """Log-likelihood and all gradients for one group, one factorization.

    L parameterizes G = L L'; r_diag holds per-observation residual
    variances. Raises a numerical error when gradients come out non-finite.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    Z = np.asarray(Z, dtype=float)
    L = np.asarray(L, dtype=float)
    r = np.asarray(r_diag, dtype=float)
    n = y.shape[0]
    Sigma = marginal_covariance(Z, L @ L.T, r)
    factor = chol_with_jitter(Sigma, group_id)
    s = y - mu
    alpha = cho_solve(factor, s, check_finite=False)
    SinvZ = cho_solve(factor, Z, check_finite=False)
    Sinv = cho_solve(factor, np.eye(n), check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    ll = -0.5 * (n * LOG_2PI + logdet + float(s @ alpha))
    r_vec = Z.T @ alpha
    dG = -0.5 * (Z.T @ SinvZ - np.outer(r_vec, r_vec))
    dL = np.tril(2.0 * dG @ L)
    dr = -0.5 * (np.diag(Sinv) - alpha**2)
    dlogr = dr * r
    out = GradientSet(mean=alpha, cov_factor=dL, log_resid_var=dlogr, loglik=ll)
    if not (
        np.all(np.isfinite(alpha)) and np.all(np.isfinite(dL)) and np.all(np.isfinite(dlogr))
    ):
        raise SingularCovarianceError(f"non-finite gradient for group {group_id!r}")
    return out


def total_loglik(ds, mus, Sigmas) -> float:
    """Sum of group log-likelihoods over a dataset in canonical group order."""
    groups = ds.groups
    if len(mus) != len(groups) or len(Sigmas) != len(groups):
        raise DataError("need one mu vector and one Sigma per group")
    total = 0.0
    for g, mu, Sigma in zip(groups, mus, Sigmas):
        total += group_loglik(g.y, mu, Sigma, g.group_id)
    return total


# Batched kernel for buckets of groups sharing one group size. numpy's
# cholesky and solve broadcast over a leading axis, which keeps the per-group
# work out of the Python loop; results match the per-group functions above.

def batched_quantities(
    S: np.ndarray,       # (k, n) residuals y - mu
    Zb: np.ndarray,      # (k, n, q)
    Lb: np.ndarray,      # (k, q, q) lower factors of G
    Rb: np.ndarray,      # (k, n) residual variances
    want_gradients: bool = True,
):
    """Log-likelihoods (and optionally gradients) for k groups of equal size.

    Returns (loglik (k,), d_mean (k,n), d_factor (k,q,q), d_logr (k,n)); the
    gradient entries are None when want_gradients is False. Raises
    numpy.linalg.LinAlgError when any matrix in the batch fails to factor;
    callers fall back to the per-group path with its jitter policy.
    """
    k, n = S.shape
    q = Zb.shape[2]
    Gb = Lb @ np.swapaxes(Lb, 1, 2)
    Sigma = np.einsum("knq,kqr,kmr->knm", Zb, Gb, Zb)
    idx = np.arange(n)
    Sigma[:, idx, idx] += Rb
    Lc = np.linalg.cholesky(Sigma)
    logdet = 2.0 * np.sum(np.log(Lc[:, idx, idx]), axis=1)

    if want_gradients:
        eye = np.broadcast_to(np.eye(n), (k, n, n))
        B = np.concatenate([S[:, :, None], Zb, eye], axis=2)
    else:
        B = S[:, :, None]
    # two triangular systems off the factor: Sigma X = B
    W = np.linalg.solve(Lc, B)
    V = np.linalg.solve(np.swapaxes(Lc, 1, 2), W)

    alpha = V[:, :, 0]
    quad = np.sum(S * alpha, axis=1)
    ll = -0.5 * (n * LOG_2PI + logdet + quad)
    if not want_gradients:
        return ll, None, None, None

    SinvZ = V[:, :, 1 : 1 + q]
    Sinv_diag = V[:, idx, 1 + q + idx]
    r_vec = np.einsum("knq,kn->kq", Zb, alpha)
    ZtSinvZ = np.einsum("knq,knr->kqr", Zb, SinvZ)
    dG = -0.5 * (ZtSinvZ - r_vec[:, :, None] * r_vec[:, None, :])
    dF = 2.0 * dG @ Lb
    tri = np.tril(np.ones((q, q), dtype=bool))
    dF = np.where(tri, dF, 0.0)
    dr = -0.5 * (Sinv_diag - alpha**2)
    dlogr = dr * Rb
    return ll, alpha, dF, dlogr
