"""Metric correctness (vs hand oracles and scikit-learn) and report behavior."""

import json

import numpy as np
import pytest
from sklearn.metrics import confusion_matrix as sk_confusion
from sklearn.metrics import precision_recall_fscore_support

from cfmsa import (
    Dataset,
    Sample,
    SyntheticConfig,
    TrainConfig,
    compare_report,
    confusion_matrix,
    evaluate,
    gen_synthetic,
    metrics_from_confusion,
    train,
)
from cfmsa.model import checkpoint_document, init_model


@pytest.fixture(scope="module")
def trained():
    cfg = SyntheticConfig(n_train=200, n_val=40, n_test=80, seed=1)
    train_set, val_set, test_set = gen_synthetic(cfg)
    config = TrainConfig(
        lr_main=1e-2, epochs=3, batch_size=16, seed=1, class_weights=None, hidden_dim=0
    )
    model, _ = train(config, train_set, val_set)
    return model, test_set


class TestMetricsFromConfusion:
    def test_perfect_predictor(self):
        m = metrics_from_confusion(np.diag([5, 3, 2]))
        assert m.accuracy == 1.0
        assert m.macro_f1 == 1.0
        assert m.weighted_f1 == 1.0
        assert m.precision == (1.0, 1.0, 1.0)

    def test_constant_predictor_hand_oracle(self):
        # 40 samples, half class 0, rest split evenly, everything predicted 0:
        # precision_0 = 0.5, recall_0 = 1, f1_0 = 2/3; macro = 2/9.
        cm = np.array([[20, 0, 0], [10, 0, 0], [10, 0, 0]])
        m = metrics_from_confusion(cm)
        assert m.accuracy == pytest.approx(0.5)
        assert m.f1[0] == pytest.approx(2 / 3, abs=1e-12)
        assert m.macro_f1 == pytest.approx(2 / 9, abs=1e-12)

    def test_matches_sklearn_on_random_labels(self, rng):
        for _ in range(25):
            y_true = rng.integers(0, 4, size=60)
            y_pred = rng.integers(0, 4, size=60)
            cm = confusion_matrix(y_true, y_pred, 4)
            np.testing.assert_array_equal(cm, sk_confusion(y_true, y_pred, labels=range(4)))
            m = metrics_from_confusion(cm)
            p, r, f1, support = precision_recall_fscore_support(
                y_true, y_pred, labels=range(4), zero_division=0
            )
            np.testing.assert_allclose(m.precision, p, atol=1e-12)
            np.testing.assert_allclose(m.recall, r, atol=1e-12)
            np.testing.assert_allclose(m.f1, f1, atol=1e-12)
            assert m.accuracy == pytest.approx(np.mean(y_true == y_pred), abs=1e-12)
            assert m.macro_f1 == pytest.approx(f1.mean(), abs=1e-12)
            assert m.weighted_f1 == pytest.approx((f1 * support).sum() / 60, abs=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            metrics_from_confusion(np.zeros((3, 3)))


class TestEvaluate:
    def test_report_structure_and_invariants(self, trained):
        model, test_set = trained
        report = evaluate(model, test_set)
        assert set(report.modes) == {"te", "tie-text", "tie-image", "tie-joint"}
        for m in report.modes.values():
            assert 0.0 <= m.accuracy <= 1.0
            cm = np.array(m.confusion)
            np.testing.assert_array_equal(cm.sum(axis=1), m.support)
            # scalars reproduce exactly from the emitted confusion matrix
            re = metrics_from_confusion(cm)
            assert re.accuracy == m.accuracy
            assert re.macro_f1 == m.macro_f1
            np.testing.assert_array_equal(re.f1, m.f1)
            assert m.macro_f1 == pytest.approx(np.mean(m.f1), abs=1e-12)
        assert report.deltas["te"]["accuracy"] == 0.0

    def test_deterministic(self, trained):
        model, test_set = trained
        a = evaluate(model, test_set).as_dict()
        b = evaluate(model, test_set).as_dict()
        assert json.dumps(a) == json.dumps(b)

    def test_thread_count_does_not_change_report(self, trained):
        model, test_set = trained
        a = evaluate(model, test_set, n_threads=1).as_dict()
        b = evaluate(model, test_set, n_threads=4).as_dict()
        assert json.dumps(a) == json.dumps(b)

    def test_does_not_mutate_parameters(self, trained):
        model, test_set = trained
        before = json.dumps(checkpoint_document(model))
        evaluate(model, test_set)
        assert json.dumps(checkpoint_document(model)) == before

    def test_rejects_incomplete_samples(self):
        model = init_model(2, 2, 3, hidden_dim=0, c_mode="uniform", seed=0)
        ds = Dataset(
            2, 2, ("positive", "neutral", "negative"),
            [Sample("only-text", np.zeros(2), None, 0)],
        )
        with pytest.raises(ValueError, match="only-text"):
            evaluate(model, ds)

    def test_rejects_empty_dataset_and_dim_mismatch(self, trained):
        model, test_set = trained
        with pytest.raises(ValueError):
            evaluate(model, Dataset(16, 16, test_set.label_names, []))
        bad = init_model(3, 16, 3, hidden_dim=0, c_mode="uniform", seed=0)
        with pytest.raises(ValueError):
            evaluate(bad, test_set)

    def test_mode_subset(self, trained):
        model, test_set = trained
        report = evaluate(model, test_set, modes=["tie-text"])
        assert list(report.modes) == ["tie-text"]
        assert report.deltas == {}


class TestCompareReport:
    def test_single_report_zero_deltas(self, trained):
        model, test_set = trained
        table = compare_report({"synthetic": evaluate(model, test_set)})
        assert "synthetic" in table
        assert "te" in table and "tie-joint" in table
        assert "(+0.0000)" in table

    def test_two_identical_reports(self, trained):
        model, test_set = trained
        report = evaluate(model, test_set)
        table = compare_report({"a": report, "b": report})
        lines = [l for l in table.splitlines() if l.startswith("tie-text")]
        assert len(lines) == 1
        assert lines[0].count("/") == 2

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            compare_report({})
