"""Model inspection: selection-frequency importance and partial dependence.

Importance counts how often each feature gets picked across an ensemble
(tree split nodes, nonzero linear coefficients) and normalizes the counts to
sum to one. Partial dependence overwrites one feature column across a
background sample and averages the component output over it; for the
residual variance the curve lives on the variance scale, for the group
covariance it traces one entry of G(x~) over group-level backgrounds.
"""

from __future__ import annotations

import numpy as np

from .boosting import FittedModel, eval_gcov_rows, eval_mean, eval_resid_var
from .errors import ConfigError

COMPONENTS = ("mean", "G", "R")
DEFAULT_GRID_SIZE = 25
GRID_PERCENTILES = (2.0, 98.0)


def _component_learners(model: FittedModel, component: str):
    if component == "mean":
        return list(model.mean_learners)
    if component == "G":
        return [h for entry in model.gcov_learners for h in entry]
    if component == "R":
        return list(model.rvar_learners)
    raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")


def variable_importance(model: FittedModel, component: str) -> dict:
    """Normalized selection frequencies per feature name.

    Returns an empty dict when the component's ensemble never selected any
    feature (constant learners, or no learners at all).
    """
    learners = _component_learners(model, component)
    p = len(model.feature_names)
    counts = np.zeros(p)
    for h in learners:
        counts += h.split_counts(p)
    total = counts.sum()
    if total == 0.0:
        return {}
    return {name: float(c / total) for name, c in zip(model.feature_names, counts)}


def _resolve_feature(model: FittedModel, feature) -> int:
    if isinstance(feature, str):
        try:
            return model.feature_names.index(feature)
        except ValueError:
            raise ConfigError(f"unknown feature {feature!r}") from None
    f = int(feature)
    if not (0 <= f < len(model.feature_names)):
        raise ConfigError(f"feature index {f} out of range")
    return f


def default_grid(background: np.ndarray, feature: int, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Evenly spaced grid between the 2nd and 98th percentile of a column."""
    col = np.asarray(background, dtype=float)[:, feature]
    lo, hi = np.percentile(col, GRID_PERCENTILES)
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, size)


def partial_dependence(
    model: FittedModel,
    component: str,
    feature,
    background: np.ndarray,
    grid: np.ndarray | None = None,
    g_entry: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Partial dependence curve of one component on one feature.

    background holds observation rows for the mean and R components and
    group summary rows for G. Returns (grid, averaged values).
    """
    if component not in COMPONENTS:
        raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    f = _resolve_feature(model, feature)
    bg = np.asarray(background, dtype=float)
    if bg.ndim != 2 or bg.shape[1] != len(model.feature_names):
        raise ConfigError(f"background must have {len(model.feature_names)} columns")
    if grid is None:
        grid = default_grid(bg, f)
    grid = np.asarray(grid, dtype=float)
    a, b = g_entry
    if component == "G" and not (0 <= a < model.q and 0 <= b < model.q):
        raise ConfigError(f"g_entry {g_entry} out of range for q={model.q}")

    values = np.empty(grid.shape[0])
    work = bg.copy()
    for i, v in enumerate(grid):
        work[:, f] = v
        if component == "mean":
            values[i] = float(np.mean(eval_mean(model, work)))
        elif component == "R":
            values[i] = float(np.mean(eval_resid_var(model, work)))
        else:
            values[i] = float(np.mean(eval_gcov_rows(model, work)[:, a, b]))
    return grid, values
