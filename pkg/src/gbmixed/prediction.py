"""Prediction, random-effect recovery, and treatment-effect inference.

The fitted model gives marginal means f(x), group covariances G(x~), and
residual variances r(x). For a group with observed responses, the best
linear unbiased predictor of its random effects is

    u_hat = G Z' Sigma^{-1} (y - f(X)),   Sigma = Z G Z' + diag(r(X)),

and conditional means add z' u_hat on top of the marginal mean. Prediction
intervals use the marginal response variance z' G z + r(x); for groups the
model never saw, u_hat is zero and the interval centers on the marginal
mean. A reduced-variance switch drops the z' G z term for unknown groups,
matching interval definitions that only count residual noise for new
clusters.

Treatment effects compare the mean ensemble at two values of the treatment
column. The variance of an individual effect Y(1) - Y(0) is

    Var = z1' G z1 + r(x, 1) + z0' G z0 + r(x, 0) - 2 z1' G z0

where z1 and z0 equal z with any treatment random-slope entry set to 1 and
0. With intercept-only random effects z1 = z0, the G terms cancel and the
variance is r(x, 1) + r(x, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .boosting import (
    FittedModel,
    eval_gcov_rows,
    eval_mean,
    eval_resid_var,
)
from .data import GroupBlock, GroupedDataset, summarize_matrix
from .errors import ConfigError, DataError
from .likelihood import chol_with_jitter, marginal_covariance
from scipy.linalg import cho_solve


def evaluate_components(model: FittedModel, X: np.ndarray, x_tilde: np.ndarray | None = None):
    """Mean vector, group covariance matrix, and residual variances.

    X holds observation rows of one group; x_tilde is that group's summary
    vector (computed from X by the aggregation rule when omitted).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise DataError(f"expected {len(model.feature_names)} feature columns")
    if x_tilde is None:
        x_tilde = summarize_rows(model, X)
    x_tilde = np.asarray(x_tilde, dtype=float)
    if x_tilde.shape != (X.shape[1],):
        raise DataError("x_tilde must have one entry per feature")
    mu = eval_mean(model, X)
    G = eval_gcov_rows(model, x_tilde[None, :])[0]
    r = eval_resid_var(model, X)
    return mu, G, r


def summarize_rows(model: FittedModel, X: np.ndarray) -> np.ndarray:
    """Group summary of rows under the model's aggregation rule."""
    return summarize_matrix(X, model.categorical_features)


def blup(model: FittedModel, group: GroupBlock) -> np.ndarray:
    """Random-effect predictor for one group with observed responses."""
    keep = np.isfinite(group.y)
    if not np.any(keep):
        return np.zeros(model.q)
    X = group.X[keep]
    Z = group.Z[keep]
    y = group.y[keep]
    xt = group.x_tilde if group.x_tilde is not None else summarize_rows(model, group.X)
    mu = eval_mean(model, X)
    G = eval_gcov_rows(model, np.asarray(xt, dtype=float)[None, :])[0]
    r = eval_resid_var(model, X)
    Sigma = marginal_covariance(Z, G, r)
    factor = chol_with_jitter(Sigma, group.group_id)
    alpha = cho_solve(factor, y - mu, check_finite=False)
    return G @ (Z.T @ alpha)


@dataclass(frozen=True)
class PredictionTable:
    """Per-row predictions in input order, ready for CSV output."""

    group_ids: list
    mu_marginal: np.ndarray
    mu_conditional: np.ndarray
    var_total: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    known_group: np.ndarray   # bool per row


def interval_halfwidth(var_total: np.ndarray, alpha: float) -> np.ndarray:
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    z = norm.ppf(1.0 - alpha / 2.0)
    return z * np.sqrt(var_total)


def predict_group_rows(
    model: FittedModel,
    X: np.ndarray,
    Z: np.ndarray,
    x_tilde: np.ndarray | None,
    u_hat: np.ndarray | None,
    alpha: float = 0.1,
    reduced_new_group_variance: bool = False,
):
    """Predictions for rows that share one group (or no group).

    u_hat of None marks an unknown group: zero BLUP, conditional equal to
    marginal, and optionally the reduced variance without the z' G z term.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (X.shape[0], model.q):
        raise DataError(f"Z must be {X.shape[0]}x{model.q}")
    mu, G, r = evaluate_components(model, X, x_tilde)
    known = u_hat is not None
    zGz = np.einsum("nq,qr,nr->n", Z, G, Z)
    if known:
        mu_cond = mu + Z @ np.asarray(u_hat, dtype=float)
        var = zGz + r
    else:
        mu_cond = mu.copy()
        var = r.copy() if reduced_new_group_variance else zGz + r
    center = mu_cond if known else mu
    half = interval_halfwidth(var, alpha)
    return mu, mu_cond, var, center - half, center + half


def predict_dataset(
    model: FittedModel,
    ds: GroupedDataset,
    training_groups: GroupedDataset | None = None,
    alpha: float = 0.1,
    reduced_new_group_variance: bool = False,
) -> PredictionTable:
    """Predict every row of a dataset, using BLUPs where groups are known.

    training_groups supplies the observed responses that drive the BLUPs;
    when omitted, the prediction dataset itself plays that role (the usual
    longitudinal setting: predict for clusters whose history is in hand).
    Groups without any finite response get a zero BLUP.
    """
    if tuple(ds.feature_names) != tuple(model.feature_names):
        raise DataError("dataset feature names do not match the model")
    source = training_groups if training_groups is not None else ds
    known: dict = {}
    for g in source.groups:
        if np.any(np.isfinite(g.y)):
            known[g.group_id] = g

    ids, mu_m, mu_c, var, lo, hi, flags = [], [], [], [], [], [], []
    for g in ds.groups:
        src = known.get(g.group_id)
        u = blup(model, src) if src is not None else None
        xt = g.x_tilde if g.x_tilde is not None else None
        m, c, v, l, h = predict_group_rows(
            model, g.X, g.Z, xt, u, alpha, reduced_new_group_variance
        )
        ids.extend([g.group_id] * g.n)
        mu_m.append(m)
        mu_c.append(c)
        var.append(v)
        lo.append(l)
        hi.append(h)
        flags.append(np.full(g.n, src is not None))
    return PredictionTable(
        group_ids=ids,
        mu_marginal=np.concatenate(mu_m),
        mu_conditional=np.concatenate(mu_c),
        var_total=np.concatenate(var),
        lo=np.concatenate(lo),
        hi=np.concatenate(hi),
        known_group=np.concatenate(flags),
    )


def _treatment_index(model: FittedModel, treatment_index=None) -> int:
    t = treatment_index if treatment_index is not None else model.treatment_index
    if t is None:
        raise ConfigError("model has no treatment column; pass treatment_index")
    if not (0 <= t < len(model.feature_names)):
        raise ConfigError(f"treatment_index {t} out of range")
    return int(t)


def cate(
    model: FittedModel,
    X: np.ndarray,
    treatment_index: int | None = None,
    levels: tuple[float, float] = (1.0, 0.0),
) -> np.ndarray:
    """Conditional average treatment effect: mean at levels[0] minus levels[1]."""
    t = _treatment_index(model, treatment_index)
    X = np.asarray(X, dtype=float)
    Xa = X.copy()
    Xa[:, t] = levels[0]
    Xb = X.copy()
    Xb[:, t] = levels[1]
    return eval_mean(model, Xa) - eval_mean(model, Xb)


def ite_variance(
    model: FittedModel,
    X: np.ndarray,
    Z: np.ndarray,
    x_tilde_rows: np.ndarray,
    treatment_index: int | None = None,
    z_treatment_index: int | None = None,
) -> np.ndarray:
    """Variance of the individual effect Y(1) - Y(0) per row.

    x_tilde_rows carries each row's group summary. z_treatment_index points
    at the treatment column inside Z when the model has a treatment random
    slope; without one the shared random effects cancel and only the two
    residual variances remain.
    """
    t = _treatment_index(model, treatment_index)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    x_tilde_rows = np.asarray(x_tilde_rows, dtype=float)
    n = X.shape[0]
    if Z.shape != (n, model.q):
        raise DataError(f"Z must be {n}x{model.q}")
    if x_tilde_rows.shape != (n, X.shape[1]):
        raise DataError("x_tilde_rows must align with X")
    X1 = X.copy()
    X1[:, t] = 1.0
    X0 = X.copy()
    X0[:, t] = 0.0
    r1 = eval_resid_var(model, X1)
    r0 = eval_resid_var(model, X0)
    z1 = Z.copy()
    z0 = Z.copy()
    if z_treatment_index is not None:
        if not (0 <= z_treatment_index < model.q):
            raise ConfigError(f"z_treatment_index {z_treatment_index} out of range")
        z1[:, z_treatment_index] = 1.0
        z0[:, z_treatment_index] = 0.0
    G = eval_gcov_rows(model, x_tilde_rows)
    v1 = np.einsum("nq,nqr,nr->n", z1, G, z1)
    v0 = np.einsum("nq,nqr,nr->n", z0, G, z0)
    cov = np.einsum("nq,nqr,nr->n", z1, G, z0)
    return v1 + r1 + v0 + r0 - 2.0 * cov


def ate(model: FittedModel, X: np.ndarray, treatment_index: int | None = None) -> float:
    """Average treatment effect: mean of the CATE over the given rows."""
    return float(np.mean(cate(model, X, treatment_index)))
