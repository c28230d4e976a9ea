"""Versioned, line-oriented textual model files.

A model file is a sequence of tagged lines:

    gbmixed-model 1
    config {...}
    meta {...}
    mean_learner {...}
    gcov_learner <entry> {...}
    rvar_learner {...}
    end

Payloads are compact JSON with sorted keys. Floats serialize through
Python's shortest round-trip repr, so a loaded model predicts bit-identically
to the one that was saved, and saving the same model twice yields identical
bytes. The version number on the first line gates loading: unknown versions
are rejected, not guessed at.
"""

from __future__ import annotations

import json

import numpy as np

from .boosting import FitConfig, FittedModel
from .data import ColumnSchema
from .errors import DataError
from .learners import (
    ConstantLearner,
    LearnerSpec,
    LinearLearner,
    TreeLeaf,
    TreeLearner,
    TreeSplit,
)

FORMAT_NAME = "gbmixed-model"
FORMAT_VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _spec_payload(spec: LearnerSpec) -> dict:
    return {
        "kind": spec.kind,
        "tree_max_depth": spec.tree_max_depth,
        "tree_min_parent": spec.tree_min_parent,
        "tree_min_child": spec.tree_min_child,
        "ridge_epsilon": spec.ridge_epsilon,
    }


def _config_payload(cfg: FitConfig) -> dict:
    return {
        "variant": cfg.variant,
        "n_iterations": cfg.n_iterations,
        "lr_mean": cfg.lr_mean,
        "lr_gcov": cfg.lr_gcov,
        "lr_rvar": cfg.lr_rvar,
        "group_fraction": cfg.group_fraction,
        "feature_fraction": cfg.feature_fraction,
        "mean_learner": _spec_payload(cfg.mean_learner),
        "gcov_learner": _spec_payload(cfg.gcov_learner),
        "rvar_learner": _spec_payload(cfg.rvar_learner),
        "lookback": cfg.lookback,
        "tolerance": cfg.tolerance,
        "early_stopping": cfg.early_stopping,
        "eval_fraction": cfg.eval_fraction,
        "seed": cfg.seed,
        "force_include": list(cfg.force_include),
        "verbose": cfg.verbose,
    }


def _config_from(payload: dict) -> FitConfig:
    specs = {
        k: LearnerSpec(**payload[k]) for k in ("mean_learner", "gcov_learner", "rvar_learner")
    }
    fields = {k: v for k, v in payload.items() if not k.endswith("_learner")}
    fields["force_include"] = tuple(fields.get("force_include", []))
    return FitConfig(**fields, **specs)


def _node_payload(node):
    if isinstance(node, TreeLeaf):
        return {"v": node.value}
    return {
        "f": node.feature,
        "t": node.threshold,
        "l": _node_payload(node.left),
        "r": _node_payload(node.right),
    }


def _node_from(payload):
    if "v" in payload:
        return TreeLeaf(value=float(payload["v"]))
    return TreeSplit(
        feature=int(payload["f"]),
        threshold=float(payload["t"]),
        left=_node_from(payload["l"]),
        right=_node_from(payload["r"]),
    )


def _learner_payload(h) -> dict:
    if isinstance(h, ConstantLearner):
        return {"kind": "constant", "value": h.value}
    if isinstance(h, LinearLearner):
        return {
            "kind": "linear",
            "features": list(h.features),
            "coef": [float(c) for c in h.coef],
            "intercept": h.intercept,
            "n_features": h.n_features,
        }
    if isinstance(h, TreeLearner):
        return {"kind": "tree", "root": _node_payload(h.root), "n_features": h.n_features}
    raise DataError(f"cannot serialize learner of type {type(h).__name__}")


def _learner_from(payload: dict):
    kind = payload["kind"]
    if kind == "constant":
        return ConstantLearner(value=float(payload["value"]))
    if kind == "linear":
        return LinearLearner(
            features=tuple(int(f) for f in payload["features"]),
            coef=np.asarray([float(c) for c in payload["coef"]]),
            intercept=float(payload["intercept"]),
            n_features=int(payload["n_features"]),
        )
    if kind == "tree":
        return TreeLearner(root=_node_from(payload["root"]), n_features=int(payload["n_features"]))
    raise DataError(f"unknown learner kind {kind!r} in model file")


def save_model(path: str, model: FittedModel, schema: ColumnSchema | None = None) -> None:
    """Write a model file; schema, when given, lets the CLI reload data files."""
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}"]
    lines.append("config " + _dump(_config_payload(model.config)))
    meta = {
        "feature_names": list(model.feature_names),
        "q": model.q,
        "treatment_index": model.treatment_index,
        "categorical_features": list(model.categorical_features),
        "mean_init": model.mean_init,
        "gcov_init": [float(v) for v in model.gcov_init],
        "logrvar_init": model.logrvar_init,
        "history": [float(v) for v in model.history],
        "best_iteration": model.best_iteration,
        "n_iterations_run": model.n_iterations_run,
        "schema": None
        if schema is None
        else {
            "group_col": schema.group_col,
            "response_col": schema.response_col,
            "z_cols": list(schema.z_cols),
            "categorical_cols": list(schema.categorical_cols),
            "treatment_col": schema.treatment_col,
        },
    }
    lines.append("meta " + _dump(meta))
    for h in model.mean_learners:
        lines.append("mean_learner " + _dump(_learner_payload(h)))
    for t, entry in enumerate(model.gcov_learners):
        for h in entry:
            lines.append(f"gcov_learner {t} " + _dump(_learner_payload(h)))
    for h in model.rvar_learners:
        lines.append("rvar_learner " + _dump(_learner_payload(h)))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> tuple[FittedModel, ColumnSchema | None]:
    """Read a model file back; returns the model and the stored schema, if any."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        raise DataError(f"{path}: not a {FORMAT_NAME} file")
    try:
        version = int(head[1])
    except ValueError:
        raise DataError(f"{path}: bad version {head[1]!r}") from None
    if version != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported model format version {version} (supported: {FORMAT_VERSION})"
        )

    config = None
    meta = None
    mean_learners = []
    gcov_by_entry: dict[int, list] = {}
    rvar_learners = []
    saw_end = False
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if saw_end:
            raise DataError(f"{path}: content after end marker at line {line_no}")
        tag, _, rest = line.partition(" ")
        try:
            if tag == "config":
                config = _config_from(json.loads(rest))
            elif tag == "meta":
                meta = json.loads(rest)
            elif tag == "mean_learner":
                mean_learners.append(_learner_from(json.loads(rest)))
            elif tag == "gcov_learner":
                entry_s, _, payload = rest.partition(" ")
                gcov_by_entry.setdefault(int(entry_s), []).append(
                    _learner_from(json.loads(payload))
                )
            elif tag == "rvar_learner":
                rvar_learners.append(_learner_from(json.loads(rest)))
            elif tag == "end":
                saw_end = True
            else:
                raise DataError(f"{path}: unknown record {tag!r} at line {line_no}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed record at line {line_no}: {exc}") from None
    if not saw_end:
        raise DataError(f"{path}: truncated model file (no end marker)")
    if config is None or meta is None:
        raise DataError(f"{path}: missing config or meta record")

    q = int(meta["q"])
    T = q * (q + 1) // 2
    gcov_learners = tuple(gcov_by_entry.get(t, []) for t in range(T))
    t_idx = meta["treatment_index"]
    model = FittedModel(
        config=config,
        feature_names=tuple(meta["feature_names"]),
        q=q,
        treatment_index=None if t_idx is None else int(t_idx),
        categorical_features=tuple(int(c) for c in meta["categorical_features"]),
        mean_init=float(meta["mean_init"]),
        mean_learners=mean_learners,
        gcov_init=np.asarray([float(v) for v in meta["gcov_init"]]),
        gcov_learners=gcov_learners,
        logrvar_init=float(meta["logrvar_init"]),
        rvar_learners=rvar_learners,
        history=[float(v) for v in meta["history"]],
        best_iteration=int(meta["best_iteration"]),
        n_iterations_run=int(meta["n_iterations_run"]),
    )
    schema = None
    stored = meta.get("schema")
    if stored is not None:
        schema = ColumnSchema(
            group_col=stored["group_col"],
            response_col=stored["response_col"],
            feature_cols=model.feature_names,
            z_cols=tuple(stored["z_cols"]),
            categorical_cols=tuple(stored["categorical_cols"]),
            treatment_col=stored["treatment_col"],
        )
    return model, schema
