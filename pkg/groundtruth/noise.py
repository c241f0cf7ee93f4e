"""
noise.py
Label-noise rates from re-annotation, groundtruth precision/recall (tagability),
prevalence estimation N^+ = N+(1 - p+) + (T - N+) p-, and synthetic noise injection.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from config import REFERENCE_INPUTS, REFERENCE_TOTAL, REFERENCE_PER_CLASS
from logger import log_event, log_warning
from utils import (
    TagNoiseError,
    ParseError,
    UndefinedStatisticError,
    make_rng,
    data_lines
)
from .annotation import AnnotationSet, AnnotationRecord
from .bootstrap import BootstrapConfig, bootstrap_ci
from .tagdata import labels_from_dense


@dataclass(frozen=True)
class ConfusionCounts:
    """Groundtruth labels scored as predictions against annotation verdicts."""
    tp: int
    fp: int
    fn: int
    tn: int
    skipped: int = 0

    @property
    def nPos(self):
        return self.tp + self.fp

    @property
    def nNeg(self):
        return self.fn + self.tn


@dataclass(frozen=True)
class NoiseRates:
    tag: str
    pPos: float
    pNeg: float
    nPosSampled: int
    nNegSampled: int
    nPosErrors: int
    nNegErrors: int
    subsetKind: str = "balanced"


@dataclass(frozen=True)
class GroundtruthQuality:
    tag: str
    precision: float
    recall: object
    precisionCi: tuple
    recallCi: object
    counts: ConfusionCounts

    @property
    def recallDefined(self):
        return self.recall is not None


@dataclass(frozen=True)
class PrevalenceEstimate:
    tag: str
    nPlus: int
    total: int
    estimate: float
    ciLow: object = None
    ciHigh: object = None

    @property
    def pctOfTotal(self):
        return 100.0 * self.estimate / self.total if self.total else 0.0


@dataclass(frozen=True)
class SubsetPrevalence:
    """Share of annotated positives of a tag in a random subset."""
    tag: str
    positives: int
    annotated: int
    share: float
    ciLow: object = None
    ciHigh: object = None


@dataclass(frozen=True)
class NoiseSpec:
    """Forward noise model on true labels: per-tag drop and spurious rates."""
    dropRates: dict = field(default_factory=dict)
    spuriousRates: dict = field(default_factory=dict)
    seed: int = 0
    splits: object = None

    def __post_init__(self):
        for name, rates in (("drop", self.dropRates), ("spurious", self.spuriousRates)):
            for tag, rate in rates.items():
                if not 0.0 <= float(rate) <= 1.0:
                    raise TagNoiseError(f"{name} rate for '{tag}' must be in [0, 1], got {rate}")


@dataclass(frozen=True)
class TagFlips:
    positives: int
    drops: int
    negatives: int
    spurious: int


@dataclass(frozen=True)
class NoiseReport:
    """Realized flips per tag plus the dense flip mask (tracks x tags)."""
    flips: dict
    flipMask: np.ndarray
    seed: int


def _answered_pairs(matrix, annotations, tag):
    """(groundtruth, verdict) int arrays over answered records of a tag, plus the skip count."""
    tagId = matrix.vocab.resolve(tag)
    tagName = matrix.vocab.tags[tagId]
    column = matrix.tag_column(tagId)
    groundtruth = []
    verdicts = []
    skipped = 0
    for record in annotations.for_tag(tagName):
        if not record.answered:
            skipped += 1
            continue
        row = matrix.trackIndex.get(record.trackId)
        if row is None:
            raise TagNoiseError(f"annotated track '{record.trackId}' is not in the label matrix")
        groundtruth.append(int(column[row]))
        verdicts.append(int(record.verdict))
    if skipped:
        log_warning(f"{skipped} skipped or pending verdicts for '{tagName}' excluded from estimation")
    pairs = np.column_stack([
        np.asarray(groundtruth, dtype=np.int64),
        np.asarray(verdicts, dtype=np.int64)
    ]) if groundtruth else np.zeros((0, 2), dtype=np.int64)
    return tagName, pairs, skipped

def _confusion(pairs):
    groundtruth, verdict = pairs[:, 0], pairs[:, 1]
    return (
        int(np.sum((groundtruth == 1) & (verdict == 1))),
        int(np.sum((groundtruth == 1) & (verdict == 0))),
        int(np.sum((groundtruth == 0) & (verdict == 1))),
        int(np.sum((groundtruth == 0) & (verdict == 0))),
    )

def annotation_confusion(matrix, annotations, tag):
    """
    TP/FP/FN/TN of groundtruth labels against annotation verdicts for one tag.
    Args:
        matrix: LabelMatrix holding the groundtruth
        annotations: AnnotationSet
        tag: Tag string or id
    """
    _, pairs, skipped = _answered_pairs(matrix, annotations, tag)
    tp, fp, fn, tn = _confusion(pairs)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn, skipped=skipped)

def quality_from_counts(tp, fp, fn):
    """
    Precision and recall from confusion counts; None where undefined.
    Args:
        tp: Groundtruth positive, verdict positive
        fp: Groundtruth positive, verdict negative
        fn: Groundtruth negative, verdict positive
    """
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return precision, recall

def rates_from_counts(tag, counts, subsetKind="balanced"):
    """
    NoiseRates from confusion counts.
    Args:
        tag: Tag string
        counts: ConfusionCounts
        subsetKind: 'balanced' or 'random'
    """
    if counts.nPos == 0 or counts.nNeg == 0:
        raise UndefinedStatisticError(
            f"'{tag}' needs annotated groundtruth-positive and -negative items "
            f"(got {counts.nPos} positive, {counts.nNeg} negative)"
        )
    return NoiseRates(
        tag=tag,
        pPos=counts.fp / counts.nPos,
        pNeg=counts.fn / counts.nNeg,
        nPosSampled=counts.nPos,
        nNegSampled=counts.nNeg,
        nPosErrors=counts.fp,
        nNegErrors=counts.fn,
        subsetKind=subsetKind
    )

def estimate_noise_rates(matrix, annotations, tag):
    """
    Error rates of positive and negative groundtruth labels for one tag.
    Args:
        matrix: LabelMatrix holding the groundtruth
        annotations: AnnotationSet with verdicts
        tag: Tag string or id
    """
    tagName = matrix.vocab.tags[matrix.vocab.resolve(tag)]
    counts = annotation_confusion(matrix, annotations, tagName)
    return rates_from_counts(tagName, counts, annotations.subsetKind)

def _precision_statistic(sample):
    tp, fp, _, _ = _confusion(sample)
    return tp / (tp + fp) if tp + fp else None

def _recall_statistic(sample):
    tp, _, fn, _ = _confusion(sample)
    return tp / (tp + fn) if tp + fn else None

def _quality_from_pairs(tagName, pairs, skipped, subsetKind, bootstrap):
    tp, fp, fn, tn = _confusion(pairs)
    counts = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn, skipped=skipped)
    if counts.nPos == 0 or counts.nNeg == 0:
        raise UndefinedStatisticError(f"'{tagName}' needs annotated items of both groundtruth classes")
    precision, recall = quality_from_counts(tp, fp, fn)
    if recall is None:
        log_warning(f"recall of '{tagName}' is undefined (no annotated positives)")

    precisionCi = None
    recallCi = None
    if bootstrap is not None:
        config = bootstrap
        if subsetKind == "balanced":
            config = bootstrap.with_strata(pairs[:, 0].tolist())
        low, high, _ = bootstrap_ci(_precision_statistic, pairs, config)
        precisionCi = (min(low, precision), max(high, precision))
        if recall is not None:
            try:
                low, high, _ = bootstrap_ci(_recall_statistic, pairs, config)
                recallCi = (min(low, recall), max(high, recall))
            except UndefinedStatisticError as e:
                log_warning(f"recall interval of '{tagName}' unavailable: {e}")

    return GroundtruthQuality(
        tag=tagName,
        precision=precision,
        recall=recall,
        precisionCi=precisionCi,
        recallCi=recallCi,
        counts=counts
    )

def groundtruth_quality(matrix, annotations, tag, bootstrap=None):
    """
    Precision and recall (tagability) of the groundtruth against annotation verdicts.
    Args:
        matrix: LabelMatrix holding the groundtruth
        annotations: AnnotationSet with verdicts
        tag: Tag string or id
        bootstrap: BootstrapConfig for 95% intervals (None skips intervals)
    """
    tagName, pairs, skipped = _answered_pairs(matrix, annotations, tag)
    return _quality_from_pairs(tagName, pairs, skipped, annotations.subsetKind, bootstrap)

def corrected_count(nPlus, total, pPos, pNeg):
    """
    Estimated positive count N+(1 - p+) + (T - N+) p-.
    Args:
        nPlus: Groundtruth occurrence N+
        total: Number of items T
        pPos: Error rate of positive labels
        pNeg: Error rate of negative labels
    """
    return nPlus * (1.0 - pPos) + (total - nPlus) * pNeg

def _rates_records(rates):
    """Per-record (class, is_error) rows reconstructed from the sampled counts."""
    rows = []
    rows += [(1, 1)] * rates.nPosErrors + [(1, 0)] * (rates.nPosSampled - rates.nPosErrors)
    rows += [(0, 1)] * rates.nNegErrors + [(0, 0)] * (rates.nNegSampled - rates.nNegErrors)
    return np.asarray(rows, dtype=np.int64)

def estimate_prevalence(nPlus, total, rates, bootstrap=None):
    """
    Corrected positive count of a tag with a bootstrap interval.
    Args:
        nPlus: Groundtruth occurrence N+
        total: Number of items T
        rates: NoiseRates measured on an annotated subset
        bootstrap: BootstrapConfig (None skips the interval)
    """
    if not 0 <= nPlus <= total:
        raise ValueError(f"need 0 <= N+ <= T, got N+={nPlus}, T={total}")

    # Exact rational arithmetic on the sampled counts, one conversion at the end
    pPos = Fraction(rates.nPosErrors, rates.nPosSampled)
    pNeg = Fraction(rates.nNegErrors, rates.nNegSampled)
    estimate = float(nPlus * (1 - pPos) + (total - nPlus) * pNeg)

    ciLow = ciHigh = None
    if bootstrap is not None:
        records = _rates_records(rates)

        def statistic(sample):
            positives = sample[sample[:, 0] == 1]
            negatives = sample[sample[:, 0] == 0]
            if len(positives) == 0 or len(negatives) == 0:
                return None
            return corrected_count(nPlus, total, positives[:, 1].mean(), negatives[:, 1].mean())

        config = bootstrap
        if rates.subsetKind == "balanced":
            config = bootstrap.with_strata(records[:, 0].tolist())
        ciLow, ciHigh, _ = bootstrap_ci(statistic, records, config)
        ciLow, ciHigh = min(ciLow, estimate), max(ciHigh, estimate)

    return PrevalenceEstimate(
        tag=rates.tag,
        nPlus=int(nPlus),
        total=int(total),
        estimate=estimate,
        ciLow=ciLow,
        ciHigh=ciHigh
    )

def subset_prevalence(matrix, annotations, tag, bootstrap=None):
    """
    Positive share of a tag by annotation verdicts on a random subset.
    Args:
        matrix: LabelMatrix the annotations refer to
        annotations: AnnotationSet (random subset)
        tag: Tag string or id
        bootstrap: BootstrapConfig (None skips the interval)
    """
    _, pairs, _ = _answered_pairs(matrix, annotations, tag)
    tagName = matrix.vocab.tags[matrix.vocab.resolve(tag)]
    if len(pairs) == 0:
        raise UndefinedStatisticError(f"no answered records for '{tagName}'")
    verdicts = pairs[:, 1]
    share = float(verdicts.mean())
    ciLow = ciHigh = None
    if bootstrap is not None and len(verdicts) >= 2:
        ciLow, ciHigh, _ = bootstrap_ci(lambda sample: float(np.mean(sample)), verdicts, bootstrap)
    return SubsetPrevalence(
        tag=tagName,
        positives=int(verdicts.sum()),
        annotated=len(verdicts),
        share=share,
        ciLow=ciLow,
        ciHigh=ciHigh
    )

def summarize_quality(rates, qualities):
    """
    Averages over tags of error rates, precision and recall.
    Args:
        rates: List of NoiseRates
        qualities: List of GroundtruthQuality
    """
    recalls = [quality.recall for quality in qualities if quality.recall is not None]
    return {
        "mean_p_pos": float(np.mean([rate.pPos for rate in rates])) if rates else None,
        "mean_p_neg": float(np.mean([rate.pNeg for rate in rates])) if rates else None,
        "mean_precision": float(np.mean([quality.precision for quality in qualities])) if qualities else None,
        "mean_recall": float(np.mean(recalls)) if recalls else None,
    }

def forward_to_observed(prevalence, dropRate, spuriousRate):
    """
    Observed error rates (p+, p-) implied by the forward noise model.
    Args:
        prevalence: True positive share
        dropRate: P(recorded 0 | true 1)
        spuriousRate: P(recorded 1 | true 0)
    """
    truePositive = prevalence * (1.0 - dropRate)
    falsePositive = (1.0 - prevalence) * spuriousRate
    falseNegative = prevalence * dropRate
    trueNegative = (1.0 - prevalence) * (1.0 - spuriousRate)
    pPos = falsePositive / (truePositive + falsePositive) if truePositive + falsePositive else 0.0
    pNeg = falseNegative / (falseNegative + trueNegative) if falseNegative + trueNegative else 0.0
    return pPos, pNeg

def observed_to_forward(observedShare, pPos, pNeg):
    """
    Forward (drop, spurious) rates and true prevalence from observed error rates.
    Args:
        observedShare: N+ / T
        pPos: Error rate of positive labels
        pNeg: Error rate of negative labels
    """
    prevalence = observedShare * (1.0 - pPos) + (1.0 - observedShare) * pNeg
    dropRate = (1.0 - observedShare) * pNeg / prevalence if prevalence else 0.0
    spuriousRate = observedShare * pPos / (1.0 - prevalence) if prevalence < 1.0 else 0.0
    return dropRate, spuriousRate, prevalence

def inject_noise(clean, spec):
    """
    Simulate weak labeling on a clean matrix.
    Args:
        clean: LabelMatrix treated as true labels
        spec: NoiseSpec
    Returns:
        (noisy LabelMatrix, NoiseReport)
    """
    for tag in list(spec.dropRates) + list(spec.spuriousRates):
        if tag not in clean.vocab.index:
            raise TagNoiseError(f"noise spec names unknown tag '{tag}'")

    truth = clean.dense().astype(bool)
    noisy = truth.copy()
    flipMask = np.zeros_like(truth)
    rowMask = np.ones(clean.nTracks, dtype=bool)
    if spec.splits:
        rowMask = np.zeros(clean.nTracks, dtype=bool)
        for split in spec.splits:
            rowMask |= clean.split_mask(split)

    flips = {}
    for tagId, tag in enumerate(clean.vocab.tags):
        dropRate = float(spec.dropRates.get(tag, 0.0))
        spuriousRate = float(spec.spuriousRates.get(tag, 0.0))
        column = truth[:, tagId]
        positives = int(np.sum(column & rowMask))
        negatives = int(np.sum(~column & rowMask))
        if dropRate == 0.0 and spuriousRate == 0.0:
            flips[tag] = TagFlips(positives, 0, negatives, 0)
            continue

        # One uniform per entry; the two events are disjoint by label
        draws = make_rng(spec.seed, tagId).random(clean.nTracks)
        dropped = column & rowMask & (draws < dropRate)
        added = ~column & rowMask & (draws < spuriousRate)
        noisy[dropped, tagId] = False
        noisy[added, tagId] = True
        flipMask[:, tagId] = dropped | added
        flips[tag] = TagFlips(positives, int(dropped.sum()), negatives, int(added.sum()))

    result = labels_from_dense(clean.trackIds, clean.vocab, noisy, clean.split)
    totalDrops = sum(flip.drops for flip in flips.values())
    totalSpurious = sum(flip.spurious for flip in flips.values())
    log_event(f"Injected noise (seed {spec.seed}): {totalDrops} positives dropped, {totalSpurious} spurious positives")
    return result, NoiseReport(flips=flips, flipMask=flipMask, seed=spec.seed)

def read_noise_spec(path):
    """
    Parse a NoiseSpec file: 'seed = N', optional 'splits = train,valid', and
    'tag, drop_rate, spurious_rate' lines.
    Args:
        path: Text file path
    """
    dropRates = {}
    spuriousRates = {}
    seed = None
    splits = None
    for lineNumber, line in data_lines(path):
        stripped = line.strip()
        key, sep, value = stripped.partition("=")
        if sep and key.strip() in ("seed", "splits"):
            if key.strip() == "seed":
                try:
                    seed = int(value.strip())
                except ValueError:
                    raise ParseError(f"seed must be an integer, got '{value.strip()}'", path, lineNumber)
            else:
                splits = tuple(part.strip() for part in value.split(",") if part.strip())
            continue

        fields = stripped.rsplit(",", 2)
        if len(fields) != 3:
            raise ParseError("expected 'tag, drop_rate, spurious_rate'", path, lineNumber)
        tag = fields[0].strip()
        try:
            dropRates[tag] = float(fields[1])
            spuriousRates[tag] = float(fields[2])
        except ValueError:
            raise ParseError("rates must be numbers", path, lineNumber)

    if seed is None:
        raise ParseError("missing 'seed = N' line", path)
    return NoiseSpec(dropRates=dropRates, spuriousRates=spuriousRates, seed=seed, splits=splits)

def reference_rates():
    """
    Reference inputs with balanced 50/50 annotation counts reconstructed from the error rates.
    Returns:
        List of (NoiseRates, N+, T)
    """
    rows = []
    for tag, nPlus, pPos, pNeg in REFERENCE_INPUTS:
        counts = ConfusionCounts(
            tp=REFERENCE_PER_CLASS - round(pPos * REFERENCE_PER_CLASS),
            fp=round(pPos * REFERENCE_PER_CLASS),
            fn=round(pNeg * REFERENCE_PER_CLASS),
            tn=REFERENCE_PER_CLASS - round(pNeg * REFERENCE_PER_CLASS)
        )
        rows.append((rates_from_counts(tag, counts, "balanced"), nPlus, REFERENCE_TOTAL))
    return rows

def quality_from_rates(rates, bootstrap=None):
    """
    GroundtruthQuality of a tag rebuilt from its sampled error counts.
    Args:
        rates: NoiseRates
        bootstrap: BootstrapConfig (None skips intervals)
    """
    records = _rates_records(rates)
    # (class, is_error) -> (groundtruth, verdict)
    pairs = np.column_stack([records[:, 0], np.where(records[:, 0] == 1, 1 - records[:, 1], records[:, 1])])
    return _quality_from_pairs(rates.tag, pairs, 0, rates.subsetKind, bootstrap)

def annotations_from_counts(tag, counts, trackIds, subsetKind="balanced"):
    """
    AnnotationSet reproducing given confusion counts on the listed tracks.
    Args:
        tag: Tag string
        counts: ConfusionCounts
        trackIds: Track ids in order TP, FP, FN, TN blocks
        subsetKind: 'balanced' or 'random'
    """
    verdicts = [1] * counts.tp + [0] * counts.fp + [1] * counts.fn + [0] * counts.tn
    if len(trackIds) != len(verdicts):
        raise ValueError("need one track id per counted record")
    records = [AnnotationRecord(trackId, tag, verdict) for trackId, verdict in zip(trackIds, verdicts)]
    return AnnotationSet(records=records, subsetKind=subsetKind)
