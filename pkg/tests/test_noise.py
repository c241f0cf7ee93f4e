import numpy as np
import pytest

from utils import TagNoiseError, ParseError, UndefinedStatisticError
from groundtruth.bootstrap import BootstrapConfig
from groundtruth.annotation import AnnotationRecord, AnnotationSet
from groundtruth.noise import (
    ConfusionCounts,
    NoiseSpec,
    annotation_confusion,
    quality_from_counts,
    rates_from_counts,
    estimate_noise_rates,
    groundtruth_quality,
    corrected_count,
    estimate_prevalence,
    subset_prevalence,
    summarize_quality,
    forward_to_observed,
    observed_to_forward,
    inject_noise,
    read_noise_spec,
    reference_rates,
    quality_from_rates,
    annotations_from_counts
)

REFERENCE_EXPECTED = {
    "instrumental": (36048.72, 14.9, 94.0, 88.7),
    "female vocalists": (71126.88, 29.3, 96.0, 80.0),
    "male vocalists": (156447.7, 64.4, 98.0, 60.5),
    "guitar": (170916.5, 70.4, 98.0, 58.3),
}


@pytest.fixture
def annotated(matrix_factory):
    """Tag 'rock': 10 groundtruth positives, 10 negatives, counts tp=8 fp=2 fn=3 tn=7."""
    dense = np.zeros((24, 1), dtype=np.uint8)
    dense[:10, 0] = 1
    matrix = matrix_factory(dense, tags=["rock"])
    verdicts = [1] * 8 + [0] * 2 + [1] * 3 + [0] * 7
    records = [AnnotationRecord(matrix.trackIds[i], "rock", v) for i, v in enumerate(verdicts)]
    records.append(AnnotationRecord(matrix.trackIds[20], "rock", -1))
    return matrix, AnnotationSet(records, "balanced")


def test_confusion_counts_and_rates(annotated):
    matrix, annotations = annotated
    counts = annotation_confusion(matrix, annotations, "rock")
    assert (counts.tp, counts.fp, counts.fn, counts.tn, counts.skipped) == (8, 2, 3, 7, 1)
    rates = estimate_noise_rates(matrix, annotations, "rock")
    assert rates.pPos == pytest.approx(0.2)
    assert rates.pNeg == pytest.approx(0.3)
    assert rates.nPosSampled == 10 and rates.nNegSampled == 10


def test_quality(annotated):
    matrix, annotations = annotated
    quality = groundtruth_quality(matrix, annotations, "rock", BootstrapConfig(nResamples=200, seed=1))
    assert quality.precision == pytest.approx(0.8)
    assert quality.recall == pytest.approx(8 / 11)
    assert quality.precisionCi[0] <= quality.precision <= quality.precisionCi[1]
    assert quality.recallCi[0] <= quality.recall <= quality.recallCi[1]


def test_undefined_cases():
    assert quality_from_counts(0, 0, 0) == (None, None)
    assert quality_from_counts(0, 5, 0) == (0.0, None)
    with pytest.raises(UndefinedStatisticError):
        rates_from_counts("x", ConfusionCounts(tp=0, fp=0, fn=1, tn=1))


def test_corrected_count_limits():
    assert corrected_count(100, 1000, 0.0, 0.0) == 100
    assert corrected_count(100, 1000, 1.0, 0.0) == 0
    assert corrected_count(100, 1000, 0.0, 1.0) == 1000


@pytest.mark.parametrize("rates, nPlus, total", reference_rates(), ids=[row[0].tag for row in reference_rates()])
def test_reference_estimates(rates, nPlus, total):
    estimateValue, pct, precision, recall = REFERENCE_EXPECTED[rates.tag]
    estimate = estimate_prevalence(nPlus, total, rates)
    assert estimate.estimate == pytest.approx(estimateValue, abs=1.0)
    assert estimate.pctOfTotal == pytest.approx(pct, abs=0.06)
    quality = quality_from_rates(rates)
    assert 100 * quality.precision == pytest.approx(precision, abs=0.05)
    assert 100 * quality.recall == pytest.approx(recall, abs=0.05)


def test_prevalence_interval_contains_estimate():
    rates, nPlus, total = reference_rates()[0]
    estimate = estimate_prevalence(nPlus, total, rates, BootstrapConfig(nResamples=300, seed=2))
    assert estimate.ciLow <= estimate.estimate <= estimate.ciHigh
    with pytest.raises(ValueError):
        estimate_prevalence(total + 1, total, rates)


def test_counts_round_trip_through_annotations(matrix_factory):
    counts = ConfusionCounts(tp=5, fp=1, fn=2, tn=4)
    dense = np.array([[1]] * 6 + [[0]] * 6, dtype=np.uint8)
    matrix = matrix_factory(dense, tags=["pop"])
    annotations = annotations_from_counts("pop", counts, matrix.trackIds)
    assert annotation_confusion(matrix, annotations, "pop") == counts


def test_subset_prevalence(matrix_factory):
    matrix = matrix_factory(np.zeros((10, 1), dtype=np.uint8), tags=["pop"])
    records = [AnnotationRecord(trackId, "pop", int(i < 3)) for i, trackId in enumerate(matrix.trackIds)]
    share = subset_prevalence(matrix, AnnotationSet(records, "random"), "pop")
    assert (share.positives, share.annotated) == (3, 10)
    assert share.share == pytest.approx(0.3)


def test_summary_averages(annotated):
    matrix, annotations = annotated
    rates = estimate_noise_rates(matrix, annotations, "rock")
    quality = groundtruth_quality(matrix, annotations, "rock")
    summary = summarize_quality([rates, rates], [quality])
    assert summary["mean_p_pos"] == pytest.approx(0.2)
    assert summary["mean_recall"] == pytest.approx(8 / 11)


def test_forward_model_conversions_agree():
    pPos, pNeg = forward_to_observed(0.2, dropRate=0.3, spuriousRate=0.05)
    observedShare = 0.2 * 0.7 + 0.8 * 0.05
    drop, spurious, prevalence = observed_to_forward(observedShare, pPos, pNeg)
    assert prevalence == pytest.approx(0.2)
    assert drop == pytest.approx(0.3)
    assert spurious == pytest.approx(0.05)


def test_injection_is_reproducible_and_localized(matrix_factory):
    rng = np.random.default_rng(0)
    clean = matrix_factory((rng.random((300, 3)) < 0.4).astype(np.uint8), tags=["a", "b", "c"])
    spec = NoiseSpec(dropRates={"a": 0.5}, spuriousRates={"b": 0.1}, seed=11)
    noisy, report = inject_noise(clean, spec)
    again, _ = inject_noise(clean, spec)
    assert np.array_equal(noisy.dense(), again.dense())

    truth, observed = clean.dense(), noisy.dense()
    assert np.array_equal(truth != observed, report.flipMask)
    # Drops only remove, spurious only add, untouched tag unchanged
    assert np.all(observed[:, 0] <= truth[:, 0])
    assert np.all(observed[:, 1] >= truth[:, 1])
    assert np.array_equal(observed[:, 2], truth[:, 2])
    assert report.flips["a"].drops == int(np.sum(truth[:, 0] != observed[:, 0]))
    # Clean matrix not mutated
    assert np.array_equal(clean.dense(), truth)


def test_zero_rates_leave_labels_unchanged(toy_matrix):
    noisy, report = inject_noise(toy_matrix, NoiseSpec(dropRates={"rock": 0.0}, seed=1))
    assert np.array_equal(noisy.dense(), toy_matrix.dense())
    assert not report.flipMask.any()


def test_drop_count_within_binomial_band(matrix_factory):
    clean = matrix_factory(np.ones((10000, 1), dtype=np.uint8), tags=["a"])
    _, report = inject_noise(clean, NoiseSpec(dropRates={"a": 0.5}, seed=5))
    assert 4793 <= report.flips["a"].drops <= 5207


def test_injection_respects_splits(toy_matrix):
    spec = NoiseSpec(dropRates={"rock": 1.0, "guitar": 1.0, "loud": 1.0}, seed=0, splits=("train",))
    noisy, _ = inject_noise(toy_matrix, spec)
    dense = noisy.dense()
    assert dense[:2].sum() == 0
    assert np.array_equal(dense[2:], toy_matrix.dense()[2:])


def test_injection_rejects_unknown_tags(toy_matrix):
    with pytest.raises(TagNoiseError):
        inject_noise(toy_matrix, NoiseSpec(dropRates={"metal": 0.1}))
    with pytest.raises(TagNoiseError):
        NoiseSpec(dropRates={"rock": 1.5})


def test_noise_spec_file(tmp_path):
    path = tmp_path / "noise.txt"
    path.write_text("# rates\nseed = 4\nsplits = train, valid\nrock, 0.2, 0.01\nhip, hop, 0.1, 0\n", encoding="utf-8")
    spec = read_noise_spec(path)
    assert spec.seed == 4
    assert spec.splits == ("train", "valid")
    assert spec.dropRates == {"rock": 0.2, "hip, hop": 0.1}
    assert spec.spuriousRates["rock"] == pytest.approx(0.01)

    path.write_text("rock, 0.2, 0.01\n", encoding="utf-8")
    with pytest.raises(ParseError, match="seed"):
        read_noise_spec(path)
