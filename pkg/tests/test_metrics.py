import logging

import numpy as np
import pytest
from sklearn.metrics import accuracy_score, precision_score, roc_auc_score

from utils.errors import DatasetError
from utils.metrics import binary_auc, compute_metrics, confusion_matrix

testdata_binary_auc = [
    ([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0], 0.75),
    ([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], 1.0),
    ([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], 0.5),
    ([0.1, 0.2, 0.3], [1, 1, 0], 0.0),
]


@pytest.mark.parametrize("scores, positive, expected", testdata_binary_auc)
def test_binary_auc(scores, positive, expected):
    assert np.isclose(binary_auc(np.array(scores), np.array(positive)), expected)


def test_binary_auc_needs_both_groups():
    assert binary_auc(np.array([0.2, 0.4]), np.array([1, 1])) is None


def brute_force_auc(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_binary_auc_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores = rng.integers(0, 5, 12).astype(float)
        positive = rng.random(12) < 0.5
        if positive.all() or not positive.any():
            continue
        assert np.isclose(binary_auc(scores, positive), brute_force_auc(scores, positive))


testdata_metrics = [
    # 3 of 4 correct
    ([[2, 1], [0, 3], [1, 0], [0, 1]], [0, 1, 1, 1], 75.0),
    ([[5, 0], [0, 5], [4, 1], [1, 4]], [0, 1, 0, 1], 100.0),
]


@pytest.mark.parametrize("logits, labels, oa", testdata_metrics)
def test_overall_accuracy(logits, labels, oa):
    report = compute_metrics(np.array(logits, dtype=float), labels)
    assert np.isclose(report.oa, oa)
    assert np.isclose(100.0 * np.trace(report.confusion) / report.confusion.sum(), report.oa)


def test_binary_auc_through_logits():
    scores = np.array([0.9, 0.8, 0.3, 0.1])
    report = compute_metrics(np.stack([-scores, scores], axis=1), [1, 0, 1, 0])
    assert np.isclose(report.auc, 75.0)
    separated = compute_metrics(np.stack([-scores, scores], axis=1), [1, 1, 0, 0])
    assert np.isclose(separated.auc, 100.0)


def test_against_sklearn():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((200, 4))
    labels = rng.integers(0, 4, 200)
    logits[np.arange(200), labels] += 1.0
    report = compute_metrics(logits, labels)
    predictions = logits.argmax(axis=1)
    assert np.isclose(report.oa, 100 * accuracy_score(labels, predictions))
    assert np.isclose(report.precision, 100 * precision_score(labels, predictions, average="macro",
                                                                labels=list(range(4)), zero_division=0))
    expected_auc = np.mean([roc_auc_score(labels == k, logits[:, k]) for k in range(4)])
    assert np.isclose(report.auc, 100 * expected_auc)
    assert np.array_equal(report.confusion.sum(axis=1), np.bincount(labels, minlength=4))


def test_monotone_invariance():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((50, 3))
    labels = rng.integers(0, 3, 50)
    base = compute_metrics(logits, labels)
    transformed = compute_metrics(np.exp(3 * logits) + 1, labels)
    assert np.isclose(base.auc, transformed.auc)
    assert np.isclose(base.oa, transformed.oa)


def test_absent_class_is_excluded(caplog):
    logits = np.array([[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [2.0, 1.0, 0.0], [0.0, 2.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        report = compute_metrics(logits, [0, 1, 0, 1])
    assert report.auc_excluded_classes == [2]
    assert report.per_class_auc[2] is None
    assert report.unpredicted_classes == [2]
    assert np.isclose(report.precision, 200.0 / 3)
    assert "excluded" in caplog.text
    assert 0 <= report.auc <= 100


def test_single_record_auc_is_nan():
    report = compute_metrics(np.array([[1.0, 0.0]]), [0])
    assert np.isnan(report.auc)
    assert report.oa == 100.0


testdata_metric_errors = [
    (np.zeros((0, 2)), []),
    (np.zeros((2, 2)), [0, 2]),
    (np.zeros((2, 2)), [0]),
]


@pytest.mark.parametrize("logits, labels", testdata_metric_errors)
def test_metric_errors(logits, labels):
    with pytest.raises(DatasetError):
        compute_metrics(logits, labels)


def test_confusion_and_text():
    matrix = confusion_matrix(np.array([0, 1, 1]), np.array([0, 0, 1]), 2)
    assert matrix.tolist() == [[1, 1], [0, 1]]
    text = compute_metrics(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]), [0, 0, 1]).as_text()
    assert "OA   66.67" in text and "confusion" in text
