import itertools

import numpy as np
import pytest

from utils import TagNoiseError, UndefinedStatisticError
from groundtruth.annotation import AnnotationRecord, AnnotationSet
from groundtruth.bootstrap import BootstrapConfig
from groundtruth.tagdata import TagVocabulary, labels_from_dense
from analysis.metrics import (
    auc,
    macro_auc,
    evaluate,
    pearson,
    spearman,
    summary_score,
    reliability_pair,
    popularity_correlation,
    write_eval_report,
    read_score_column
)


def brute_force_auc(scores, labels):
    positives = [s for s, y in zip(scores, labels) if y]
    negatives = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(positives, negatives))
    return total / (len(positives) * len(negatives))


def test_auc_matches_pair_counting_with_ties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        scores = rng.integers(0, 5, size=30).astype(float)
        labels = rng.random(30) < 0.4
        if labels.all() or not labels.any():
            continue
        assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def pairwise_auc(scores, labels):
    positives = scores[labels][:, None]
    negatives = scores[~labels][None, :]
    return float(np.mean((positives > negatives) + 0.5 * (positives == negatives)))


def random_auc_instances(count, seed):
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < count:
        n = int(rng.integers(2, 201))
        # integer scores force ties in about half the instances
        scores = rng.integers(0, 8, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if labels.all() or not labels.any():
            continue
        produced += 1
        yield scores, labels


def test_auc_agrees_with_pairwise_counting_on_random_instances():
    for scores, labels in random_auc_instances(500, 11):
        assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-9)


def test_auc_invariant_under_monotone_transform():
    for scores, labels in random_auc_instances(100, 12):
        base = auc(scores, labels)
        assert auc(3.0 * scores + 1.0, labels) == pytest.approx(base, abs=1e-12)
        assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)


def test_auc_of_complemented_labels():
    for scores, labels in random_auc_instances(100, 13):
        assert auc(scores, ~labels) == pytest.approx(1.0 - auc(scores, labels), abs=1e-12)


def test_auc_edge_values():
    assert auc([0.1, 0.2, 0.9], [0, 0, 1]) == 1.0
    assert auc([0.9, 0.2, 0.1], [0, 0, 1]) == 0.0
    assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.2], [1, 1]) is None


def test_macro_auc_skips_single_class_columns():
    scores = np.array([[0.1, 0.5], [0.9, 0.4]])
    targets = np.array([[0, 1], [1, 1]])
    assert macro_auc(scores, targets) == 1.0


def test_evaluate_against_groundtruth(toy_matrix):
    scores = np.array([
        [0.9, 0.8, 0.1],
        [0.7, 0.2, 0.3],
        [0.2, 0.6, 0.9],
        [0.8, 0.7, 0.6],
    ])
    report = evaluate(scores, toy_matrix.trackIds, toy_matrix.vocab.tags, toy_matrix)
    assert report.source == "groundtruth"
    assert report.aucs == (1.0, 1.0, 1.0)
    assert report.nPos == (3, 3, 2)
    assert report.macroAuc == 1.0

    single = evaluate(scores[:2], toy_matrix.trackIds[:2], toy_matrix.vocab.tags, toy_matrix, tags=["rock"])
    assert single.aucs == (None,)
    assert single.macroAuc is None


def test_evaluate_against_annotations(toy_matrix):
    scores = np.array([[0.9], [0.1], [0.5]])
    trackIds = toy_matrix.trackIds[:3]
    records = [
        AnnotationRecord(trackIds[0], "rock", 1),
        AnnotationRecord(trackIds[1], "rock", 0),
        AnnotationRecord(trackIds[2], "rock", -1),
    ]
    report = evaluate(scores, trackIds, ["rock"], AnnotationSet(records, "random"))
    assert report.source == "annotation"
    assert report.aucs == (1.0,)
    assert report.nPos == (1,) and report.nNeg == (1,)

    with pytest.raises(TagNoiseError, match="miss"):
        evaluate(scores, trackIds, ["rock"], AnnotationSet(records[:2], "random"))


def test_evaluate_interval_contains_point():
    rng = np.random.default_rng(0)
    labels = rng.random(80) < 0.5
    scores = labels + rng.normal(scale=0.8, size=80)
    vocab = TagVocabulary(tags=["x"])
    trackIds = [f"r{i}" for i in range(80)]
    matrix = labels_from_dense(trackIds, vocab, labels[:, None])
    report = evaluate(scores[:, None], trackIds, ["x"], matrix, bootstrap=BootstrapConfig(nResamples=200, seed=1))
    assert report.ciLow[0] <= report.aucs[0] <= report.ciHigh[0]


def test_correlations():
    assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [1, 4, 9, 100]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2])


def test_reliability_and_summary(toy_matrix):
    scores = np.array([[0.9, 0.8, 0.1], [0.7, 0.2, 0.3], [0.2, 0.6, 0.9], [0.8, 0.7, 0.6]])
    report = evaluate(scores, toy_matrix.trackIds, toy_matrix.vocab.tags, toy_matrix)
    assert summary_score(report, ["rock", "loud"]) == 1.0
    result = reliability_pair([0.7, 0.8, 0.9], [0.6, 0.75, 0.85], "gt", "ann")
    assert result.pearson > 0.9 and result.n == 3
    with pytest.raises(TagNoiseError):
        reliability_pair([0.7], [0.6, 0.5])
    single = evaluate(scores[:2], toy_matrix.trackIds[:2], toy_matrix.vocab.tags, toy_matrix, tags=["rock"])
    with pytest.raises(UndefinedStatisticError):
        summary_score(single)


def test_popularity_correlation(toy_matrix):
    scores = np.array([[0.9, 0.8, 0.1], [0.7, 0.2, 0.3], [0.2, 0.6, 0.9], [0.8, 0.7, 0.6]])
    report = evaluate(scores, toy_matrix.trackIds, toy_matrix.vocab.tags, toy_matrix)
    # All AUCs equal, so the correlation is undefined
    assert popularity_correlation(report, toy_matrix.vocab).spearman is None


def test_report_file_round_trip_of_values(toy_matrix, tmp_path):
    scores = np.array([[0.9, 0.8, 0.1], [0.7, 0.2, 0.3], [0.2, 0.6, 0.9], [0.8, 0.7, 0.6]])
    report = evaluate(scores, toy_matrix.trackIds, toy_matrix.vocab.tags, toy_matrix)
    path = write_eval_report(report, tmp_path / "eval.csv")
    text = path.read_text(encoding="utf-8")
    assert "reference_source,,,groundtruth" in text
    assert read_score_column(path) == {"rock": 1.0, "guitar": 1.0, "loud": 1.0}
