import numpy as np
import pytest

from wglin.errors import EmptyConfusion, LabelOutOfRange, NoValidClass, NonFinite
from wglin.metrics import (
    auc_ovr,
    classification_metrics,
    cohen_kappa,
    confusion_matrix,
    evaluate_predictions,
    report_to_csv,
)
from wglin.rng import Rng


def auc_pairwise_oracle(scores, y_true, num_classes):
    """O(n^2) pairwise comparison: wins + half-ties over all pos/neg pairs."""
    aucs = []
    for k in range(num_classes):
        pos = [s for s, y in zip(scores[:, k], y_true) if y == k]
        neg = [s for s, y in zip(scores[:, k], y_true) if y != k]
        if not pos or not neg:
            continue
        wins = 0.0
        for p in pos:
            for n in neg:
                wins += 1.0 if p > n else (0.5 if p == n else 0.0)
        aucs.append(wins / (len(pos) * len(neg)))
    return float(np.mean(aucs))


# -- confusion matrix --------------------------------------------------------

def test_perfect_predictions_diagonal():
    y = np.array([0, 1, 2, 1, 0])
    cm = confusion_matrix(y, y, 3)
    assert np.array_equal(cm, np.diag([2, 2, 1]))


def test_empty_input_zero_matrix():
    cm = confusion_matrix([], [], 4)
    assert np.array_equal(cm, np.zeros((4, 4)))


def test_confusion_matches_tally_oracle(rng):
    n, c = 200, 5
    y_true = np.array([rng.randrange(c) for _ in range(n)])
    y_pred = np.array([rng.randrange(c) for _ in range(n)])
    cm = confusion_matrix(y_true, y_pred, c)
    want = np.zeros((c, c), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        want[t, p] += 1
    assert np.array_equal(cm, want)
    assert cm.sum() == n


def test_out_of_range_labels_rejected():
    with pytest.raises(LabelOutOfRange):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(LabelOutOfRange):
        confusion_matrix([0, -1], [0, 1], 3)
    with pytest.raises(LabelOutOfRange):
        confusion_matrix([0, 1, 2], [0, 1], 3)


# -- classification metrics --------------------------------------------------

def test_perfect_two_class_confusion():
    m = classification_metrics(np.array([[50, 0], [0, 50]]))
    assert m["accuracy"] == 1.0
    for d in m["per_class"]:
        assert d["precision"] == d["specificity"] == d["f1"] == 1.0


def test_symmetric_confusion_closed_form():
    m = classification_metrics(np.array([[40, 10], [10, 40]]))
    assert m["accuracy"] == pytest.approx(0.8)
    for d in m["per_class"]:
        assert d["precision"] == pytest.approx(0.8)
        assert d["specificity"] == pytest.approx(0.8)
        assert d["f1"] == pytest.approx(0.8)
    assert m["macro_precision"] == pytest.approx(0.8)


def test_absent_class_convention():
    cm = np.zeros((3, 3), dtype=int)
    cm[0, 0] = 5
    cm[1, 1] = 5
    m = classification_metrics(cm)
    absent = m["per_class"][2]
    assert absent["precision"] == 0.0 and absent["f1"] == 0.0
    assert absent["absent"] is True
    assert m["per_class"][0]["absent"] is False


def test_empty_confusion_rejected():
    with pytest.raises(EmptyConfusion):
        classification_metrics(np.zeros((3, 3)))


def test_accuracy_is_trace_over_total(rng):
    cm = np.array([[rng.randrange(20) for _ in range(4)] for _ in range(4)])
    cm[0, 0] += 1   # guarantee nonempty
    m = classification_metrics(cm)
    assert m["accuracy"] == np.trace(cm) / cm.sum()


# -- Cohen's kappa -----------------------------------------------------------

def test_kappa_perfect_agreement():
    assert cohen_kappa(np.diag([30, 20, 10])) == pytest.approx(1.0)


def test_kappa_closed_form():
    assert cohen_kappa(np.array([[40, 10], [10, 40]])) == pytest.approx(0.6)


def test_kappa_degenerate_single_class():
    cm = np.zeros((3, 3))
    cm[1, 1] = 50.0
    assert cohen_kappa(cm) == 0.0


def test_kappa_chance_level_monte_carlo():
    rng = Rng(99)
    n, c = 10_000, 4
    y_true = np.array([rng.randrange(c) for _ in range(n)])
    y_pred = np.array([rng.randrange(c) for _ in range(n)])
    k = cohen_kappa(confusion_matrix(y_true, y_pred, c))
    assert abs(k) < 0.05


def test_kappa_one_iff_diagonal():
    assert cohen_kappa(np.diag([5, 5])) == pytest.approx(1.0)
    nd = np.diag([5, 5]).astype(float)
    nd[0, 1] = 1.0
    assert cohen_kappa(nd) < 1.0


# -- AUC ---------------------------------------------------------------------

def test_auc_perfect_separation():
    y = np.array([0, 0, 1, 1])
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]])
    assert auc_ovr(scores, y, 2) == pytest.approx(1.0)


def test_auc_all_ties_is_exactly_half():
    y = np.array([0, 0, 1, 1, 2])
    scores = np.full((5, 3), 0.25)
    assert auc_ovr(scores, y, 3) == 0.5


def test_auc_matches_pairwise_oracle(rng):
    n, c = 100, 4
    y = np.array([rng.randrange(c) for _ in range(n)])
    scores = rng.fill_uniform((n, c), 0.0, 1.0)
    scores[::7] = np.round(scores[::7], 1)     # inject ties
    got = auc_ovr(scores, y, c)
    assert abs(got - auc_pairwise_oracle(scores, y, c)) < 1e-12


def test_auc_monotone_transform_invariant(rng):
    n, c = 60, 3
    y = np.array([rng.randrange(c) for _ in range(n)])
    scores = rng.fill_uniform((n, c), 0.0, 1.0)
    assert auc_ovr(np.exp(5 * scores), y, c) == pytest.approx(
        auc_ovr(scores, y, c), abs=1e-12)


def test_auc_degenerate_cases():
    with pytest.raises(NoValidClass):
        auc_ovr(np.ones((3, 2)), np.array([0, 0, 0]), 2)
    with pytest.raises(NonFinite):
        auc_ovr(np.array([[np.nan, 1.0]]), np.array([0]), 2)


def test_auc_excludes_absent_class(rng):
    y = np.array([0, 0, 1, 1])
    scores = rng.fill_uniform((4, 3), 0.0, 1.0)
    two = auc_ovr(scores[:, :2], y, 2)
    three = auc_ovr(scores, y, 3)      # class 2 absent, excluded
    pair = auc_pairwise_oracle(scores, y, 3)
    assert three == pytest.approx(pair, abs=1e-12)
    assert abs(three - two) < 1e-12


# -- full report -------------------------------------------------------------

def test_report_permutation_invariant(rng):
    n, c = 50, 3
    y = np.array([rng.randrange(c) for _ in range(n)])
    pred = np.array([rng.randrange(c) for _ in range(n)])
    scores = rng.fill_uniform((n, c), 0.0, 1.0)
    perm = list(range(n))
    rng.shuffle(perm)
    a = evaluate_predictions(y, pred, scores, c)
    b = evaluate_predictions(y[perm], pred[perm], scores[perm], c)
    assert a.accuracy == b.accuracy
    assert a.kappa == b.kappa
    assert a.macro_auc == pytest.approx(b.macro_auc, abs=1e-12)


def test_csv_format():
    y = np.array([0, 0, 1, 1])
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]])
    report = evaluate_predictions(y, y, scores, 2)
    csv = report_to_csv(report)
    lines = csv.strip().split("\n")
    assert lines[0] == "acc,prec,spec,kappa,f1,auc"
    assert lines[1] == "100.00,100.00,100.00,100.00,100.00,100.00"
    assert lines[2] == "grade,prec,spec,f1"
    assert lines[3] == "0,100.00,100.00,100.00"
    assert len(lines) == 3 + 2
