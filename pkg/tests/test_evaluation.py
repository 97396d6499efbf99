from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, f1_score, recall_score

from latent_emotion.diagnostics import reduced_model_config
from latent_emotion.evaluation import (
    NOT_REPRODUCIBLE,
    REFERENCE,
    EvaluationError,
    OracleModel,
    ablation_grid,
    confusion_matrix,
    loso_folds,
    metrics,
    run_ablations,
    run_loso,
)
from test_model import tiny_samples


def brute_force(y_true, y_pred, c):
    """Metrics recounted from the raw prediction lists."""
    recalls, f1s = [], []
    for k in range(c):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == k and p == k)
        support = sum(1 for t in y_true if t == k)
        predicted = sum(1 for p in y_pred if p == k)
        r = tp / support if support else 0.0
        pr = tp / predicted if predicted else 0.0
        recalls.append(r)
        f1s.append(2 * pr * r / (pr + r) if pr + r else 0.0)
    acc = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return acc, sum(f1s) / c, sum(recalls) / c


def expand(cm):
    y_true, y_pred = [], []
    for i, row in enumerate(cm):
        for j, n in enumerate(row):
            y_true += [i] * int(n)
            y_pred += [j] * int(n)
    return y_true, y_pred


class TestMetrics:
    def test_hand_cases(self):
        assert metrics(np.diag([3, 1, 4])) == (1.0, 1.0, 1.0)
        m = metrics([[2, 1], [1, 2]])
        assert m == pytest.approx((2 / 3, 2 / 3, 2 / 3))
        m = metrics([[3, 0], [3, 0]])
        assert m == pytest.approx((0.5, 1 / 3, 0.5))

    def test_1000_random_matrices_vs_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            c = int(rng.integers(2, 6))
            cm = rng.integers(0, 6, (c, c)) * (rng.random((c, c)) < 0.7)
            if cm.sum() == 0:
                cm[0, 0] = 1
            y_true, y_pred = expand(cm)
            np.testing.assert_array_equal(confusion_matrix(y_true, y_pred, c), cm)
            acc, uf1, uar = metrics(cm)
            b_acc, b_uf1, b_uar = brute_force(y_true, y_pred, c)
            assert acc == b_acc
            assert abs(uf1 - b_uf1) < 1e-12 and abs(uar - b_uar) < 1e-12

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
    def test_agrees_with_sklearn_when_all_classes_present(self, pairs):
        y_true, y_pred = [p[0] for p in pairs], [p[1] for p in pairs]
        labels = list(range(4))
        acc, uf1, uar = metrics(confusion_matrix(y_true, y_pred, 4))
        assert acc == pytest.approx(accuracy_score(y_true, y_pred))
        assert uf1 == pytest.approx(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))
        assert uar == pytest.approx(recall_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))

    @pytest.mark.parametrize("cm", [np.zeros((2, 2)), np.zeros((0, 0)), np.ones((2, 3)), [[1, -1], [0, 1]]])
    def test_invalid(self, cm):
        with pytest.raises(ValueError):
            metrics(cm)

    def test_confusion_errors(self):
        with pytest.raises(ValueError):
            confusion_matrix([0, 1], [0], 2)
        with pytest.raises(ValueError):
            confusion_matrix([0, 2], [0, 1], 2)


class TestFolds:
    def test_one_fold_per_subject(self):
        samples = tiny_samples(6)
        for s, subj in zip(samples, ["s3", "s1", "s2", "s1", "s3", "s2"]):
            s.subject_id = subj
        folds = loso_folds(samples)
        assert [held for _, held in folds] == ["s1", "s2", "s3"]
        for train, held in folds:
            assert held not in train and len(train) == 2

    def test_single_subject(self):
        samples = tiny_samples(2)
        for s in samples:
            s.subject_id = "only"
        with pytest.raises(ValueError):
            loso_folds(samples)


CFG = replace(reduced_model_config(), epochs=1, batch_size=4)


class TestLoso:
    def test_oracle_model_scores_perfectly(self):
        rep = run_loso(tiny_samples(6), CFG, model_factory=OracleModel)
        assert rep.metrics == (1.0, 1.0, 1.0)
        assert sorted(sid for f in rep.folds for sid in f.sample_ids) == [f"x{i}" for i in range(6)]

    def test_pooled_equals_sum_of_folds_and_raw_recount(self):
        rep = run_loso(tiny_samples(6), CFG)
        total = sum(f.confusion(3) for f in rep.folds)
        np.testing.assert_array_equal(rep.confusion, total)
        y_true = [int(t) for f in rep.folds for t in f.y_true]
        y_pred = [int(p) for f in rep.folds for p in f.y_pred]
        assert rep.metrics == pytest.approx(brute_force(y_true, y_pred, 3), abs=1e-12)
        assert rep.confusion.sum() == 6

    def test_report_files(self, tmp_path):
        rep = run_loso(tiny_samples(4), CFG, name="tiny")
        paths = rep.write(tmp_path)
        text = paths[0].read_text()
        assert "name = tiny" in text and f"seed = {CFG.seed}" in text and "[confusion]" in text
        lines = paths[1].read_text().splitlines()
        assert lines[0] == "sample_id,subject,true,pred,p_0,p_1,p_2"
        assert len(lines) == 5

    def test_deterministic_and_parallel_equal(self):
        a = run_loso(tiny_samples(4), CFG)
        b = run_loso(tiny_samples(4), CFG)
        c = run_loso(tiny_samples(4), CFG, jobs=2)
        assert a.predictions_csv() == b.predictions_csv() == c.predictions_csv()
        assert a.text() == c.text()

    def test_fold_failure_names_subject(self):
        class Broken(OracleModel):
            def fit(self, X, y=None):
                raise RuntimeError("boom")

        with pytest.raises(EvaluationError, match="sub0"):
            run_loso(tiny_samples(4), CFG, model_factory=Broken)


class TestAblations:
    def test_grid(self):
        rows = ablation_grid(CFG)
        assert [r for r, _ in rows] == list(REFERENCE)
        cfgs = dict(rows)
        assert cfgs["weighting=gaussian"] == cfgs["colour"]
        assert cfgs["fusion=guided"] == cfgs["colour+depth+ps"]
        assert cfgs["weighting=uniform"].frame_weighting == "uniform"
        assert cfgs["fusion=concat"].fusion == "concat" and cfgs["fusion=concat"].arm == "colour+depth+ps"

    def test_duplicate_rows_share_one_run(self, tmp_path):
        calls = []

        class Counting(OracleModel):
            def fit(self, X, y=None):
                calls.append(self.config)
                return self

        rep = run_ablations(tiny_samples(4), CFG, model_factory=Counting)
        assert len(calls) == 6 * 2  # six distinct configs, two folds each
        summary = rep.summary_csv().splitlines()
        assert summary[0].startswith("row,arm,frames,fusion,seed,acc,uf1,uar,ref_acc")
        assert len(summary) == 9
        assert all(NOT_REPRODUCIBLE in line for line in summary[1:])
        assert rep["fusion=guided"].metrics == (1.0, 1.0, 1.0)
        paths = rep.write(tmp_path)
        assert (tmp_path / "colour_depth_ps" / "predictions.csv") in paths
