"""Model files: bit-identical round trips, byte-identical saves, version gate."""

import numpy as np
import pytest

from gbmixed.boosting import (
    config_for_variant,
    eval_gcov_rows,
    eval_mean,
    eval_resid_var,
    fit,
)
from gbmixed.data import ColumnSchema
from gbmixed.errors import DataError
from gbmixed.learners import LearnerSpec
from gbmixed.model_io import FORMAT_VERSION, load_model, save_model
from util import clustered_dataset


def fitted(variant, kind, rng, n_iterations=4):
    learner = LearnerSpec(kind=kind, tree_min_parent=4, tree_min_child=2)
    cfg = config_for_variant(
        variant,
        learner,
        n_iterations=n_iterations,
        group_fraction=1.0,
        feature_fraction=1.0,
        early_stopping=False,
        eval_fraction=0.25,
        lr_mean=0.2,
        lr_gcov=0.05,
        lr_rvar=0.1,
    )
    ds = clustered_dataset(rng, n_groups=30, n_per=2, p=3, mean_fn=lambda X: X[:, 0])
    return fit(ds, cfg), ds


def assert_same_predictions(m1, m2, ds):
    X = ds.stacked().X
    Xt = ds.x_tilde_matrix()
    np.testing.assert_array_equal(eval_mean(m1, X), eval_mean(m2, X))
    np.testing.assert_array_equal(eval_resid_var(m1, X), eval_resid_var(m2, X))
    np.testing.assert_array_equal(eval_gcov_rows(m1, Xt), eval_gcov_rows(m2, Xt))


class TestRoundTrip:
    # a constant row learner is only legal where no variance component varies
    @pytest.mark.parametrize(
        "variant,kind",
        [(v, k) for v in ("base", "rboost", "gboost", "grboost") for k in ("linear", "tree")]
        + [("base", "constant")],
    )
    def test_bit_identical_predictions(self, tmp_path, variant, kind):
        rng = np.random.default_rng(hash((variant, kind)) % 2**32)
        model, ds = fitted(variant, kind, rng)
        path = tmp_path / "m.txt"
        save_model(path, model)
        back, schema = load_model(path)
        assert schema is None
        assert back.history == model.history
        assert back.best_iteration == model.best_iteration
        assert back.feature_names == model.feature_names
        assert back.config == model.config
        assert_same_predictions(model, back, ds)

    def test_save_load_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        model, _ = fitted("grboost", "tree", rng)
        p1 = tmp_path / "a.txt"
        p2 = tmp_path / "b.txt"
        save_model(p1, model)
        back, _ = load_model(p1)
        save_model(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_repeated_saves_byte_identical(self, tmp_path):
        rng = np.random.default_rng(6)
        model, _ = fitted("rboost", "tree", rng)
        p1 = tmp_path / "a.txt"
        p2 = tmp_path / "b.txt"
        save_model(p1, model)
        save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_schema_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        model, _ = fitted("base", "tree", rng)
        schema = ColumnSchema(
            group_col="site",
            response_col="outcome",
            feature_cols=model.feature_names,
            categorical_cols=(model.feature_names[1],),
        )
        path = tmp_path / "m.txt"
        save_model(path, model, schema=schema)
        _, back = load_model(path)
        assert back.group_col == "site"
        assert back.response_col == "outcome"
        assert back.feature_cols == model.feature_names
        assert back.categorical_cols == (model.feature_names[1],)
        assert back.treatment_col is None


class TestFormatGuards:
    def write_model(self, tmp_path):
        rng = np.random.default_rng(8)
        model, _ = fitted("base", "constant", rng, n_iterations=2)
        path = tmp_path / "m.txt"
        save_model(path, model)
        return path

    def test_version_gate(self, tmp_path):
        path = self.write_model(tmp_path)
        lines = path.read_text().splitlines()
        lines[0] = f"gbmixed-model {FORMAT_VERSION + 1}"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="version"):
            load_model(path)

    def test_not_a_model_file(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("hello,world\n1,2\n")
        with pytest.raises(DataError):
            load_model(path)
        empty = tmp_path / "empty.txt"
        empty.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_model(empty)

    def test_truncated_file(self, tmp_path):
        path = self.write_model(tmp_path)
        lines = path.read_text().splitlines()
        assert lines[-1] == "end"
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="truncated"):
            load_model(path)

    def test_content_after_end(self, tmp_path):
        path = self.write_model(tmp_path)
        path.write_text(path.read_text() + "mean_learner {}\n")
        with pytest.raises(DataError, match="after end"):
            load_model(path)

    def test_malformed_record_names_line(self, tmp_path):
        path = self.write_model(tmp_path)
        lines = path.read_text().splitlines()
        lines[2] = "meta {not json"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="line 3"):
            load_model(path)

    def test_unknown_record_tag(self, tmp_path):
        path = self.write_model(tmp_path)
        lines = path.read_text().splitlines()
        lines.insert(3, "surprise {}")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="surprise"):
            load_model(path)

    def test_missing_meta(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("gbmixed-model 1\nend\n")
        with pytest.raises(DataError, match="missing config or meta"):
            load_model(path)
