"""
metrics.py
Per-tag AUC-ROC (Mann-Whitney), macro aggregation, correlations and reliability pairs.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from logger import log_warning, log_artifact
from utils import TagNoiseError, UndefinedStatisticError, get_thread_count, write_table
from groundtruth.annotation import AnnotationSet
from groundtruth.bootstrap import bootstrap_ci
from groundtruth.tagdata import LabelMatrix

FOOTER_KEYS = ("macro_auc", "reference_source")


@dataclass(frozen=True)
class EvalReport:
    """Per-tag AUCs (None = undefined) aligned with tags."""
    tags: tuple
    aucs: tuple
    nPos: tuple
    nNeg: tuple
    source: str
    ciLow: tuple = ()
    ciHigh: tuple = ()

    @property
    def defined(self):
        return tuple(value is not None for value in self.aucs)

    @property
    def macroAuc(self):
        values = [value for value in self.aucs if value is not None]
        return float(np.mean(values)) if values else None

    def auc_of(self, tag):
        return self.aucs[self.tags.index(tag)]


@dataclass(frozen=True)
class CorrelationReport:
    pearson: object
    spearman: object
    n: int
    labelA: str = "a"
    labelB: str = "b"
    aggregation: str = ""
    extra: dict = field(default_factory=dict)


def auc(scores, labels):
    """
    Rank-based AUC-ROC with midranks for ties; None when only one class is present.
    Args:
        scores: Real score per item
        labels: Binary label per item
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    nPos = int(labels.sum())
    nNeg = len(labels) - nPos
    if nPos == 0 or nNeg == 0:
        return None
    ranks = stats.rankdata(scores)
    # Midranks are exact halves, so the U statistic is exact in float64
    uStatistic = ranks[labels].sum() - nPos * (nPos + 1) / 2.0
    return float(uStatistic / (nPos * nNeg))

def macro_auc(scores, targets):
    """
    Unweighted mean of the defined per-column AUCs, or None.
    Args:
        scores: (N, K) scores
        targets: (N, K) binary targets
    """
    values = [auc(scores[:, k], targets[:, k]) for k in range(targets.shape[1])]
    values = [value for value in values if value is not None]
    return float(np.mean(values)) if values else None

def _annotation_targets(annotations, trackIds, tags):
    """(targets, covered mask) from annotation verdicts; every requested cell must exist."""
    verdicts = {(record.trackId, record.tag): record.verdict for record in annotations.records}
    targets = np.zeros((len(trackIds), len(tags)), dtype=np.float64)
    covered = np.zeros((len(trackIds), len(tags)), dtype=bool)
    missing = []
    nSkipped = 0
    for row, trackId in enumerate(trackIds):
        for col, tag in enumerate(tags):
            key = (trackId, tag)
            if key not in verdicts:
                missing.append(key)
                continue
            verdict = verdicts[key]
            if verdict in (0, 1):
                targets[row, col] = verdict
                covered[row, col] = True
            else:
                nSkipped += 1
    if missing:
        preview = ", ".join(f"({trackId}, {tag})" for trackId, tag in missing[:10])
        raise TagNoiseError(f"annotations miss {len(missing)} requested cells: {preview}")
    if nSkipped:
        log_warning(f"{nSkipped} skipped or pending annotation cells excluded from evaluation")
    return targets, covered

def evaluate(scores, trackIds, scoreTags, reference, tags=None, bootstrap=None):
    """
    Per-tag AUC of model scores against a reference.
    Args:
        scores: (N, K) scores, rows aligned with trackIds, columns with scoreTags
        trackIds: Track ids of the score rows
        scoreTags: Tag names of the score columns
        reference: LabelMatrix (groundtruth) or AnnotationSet (annotation)
        tags: Tag subset to evaluate (default: all score tags)
        bootstrap: BootstrapConfig for per-tag intervals (None skips them)
    """
    scores = np.asarray(scores, dtype=np.float64)
    scoreTags = list(scoreTags)
    if scores.shape != (len(trackIds), len(scoreTags)):
        raise ValueError(f"scores shape {scores.shape} does not match {len(trackIds)} tracks x {len(scoreTags)} tags")
    tags = list(tags) if tags else scoreTags
    unknown = [tag for tag in tags if tag not in scoreTags]
    if unknown:
        raise TagNoiseError(f"tags without model outputs: {unknown}")
    columns = [scoreTags.index(tag) for tag in tags]

    if isinstance(reference, LabelMatrix):
        source = "groundtruth"
        rows = reference.rows_for(trackIds)
        tagIds = [reference.vocab.resolve(tag) for tag in tags]
        targets = reference.labels[rows][:, tagIds].toarray().astype(np.float64)
        covered = np.ones(targets.shape, dtype=bool)
    elif isinstance(reference, AnnotationSet):
        source = "annotation"
        targets, covered = _annotation_targets(reference, list(trackIds), tags)
    else:
        raise TypeError("reference must be a LabelMatrix or an AnnotationSet")

    def one(k):
        mask = covered[:, k]
        tagScores = scores[mask, columns[k]]
        tagLabels = targets[mask, k]
        value = auc(tagScores, tagLabels)
        low = high = None
        if bootstrap is not None and value is not None:
            records = np.column_stack([tagScores, tagLabels])
            config = bootstrap.with_strata(tagLabels.astype(int).tolist())
            try:
                low, high, _ = bootstrap_ci(lambda sample: auc(sample[:, 0], sample[:, 1]), records, config)
            except UndefinedStatisticError as e:
                log_warning(f"AUC interval of '{tags[k]}' unavailable: {e}")
        nPos = int(tagLabels.sum())
        return value, nPos, len(tagLabels) - nPos, low, high

    threads = get_thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(tags))))
    else:
        results = [one(k) for k in range(len(tags))]

    undefined = [tag for tag, result in zip(tags, results) if result[0] is None]
    if undefined:
        log_warning(f"AUC undefined for {len(undefined)} single-class tags, excluded from macro AUC: {undefined[:5]}")

    return EvalReport(
        tags=tuple(tags),
        aucs=tuple(result[0] for result in results),
        nPos=tuple(result[1] for result in results),
        nNeg=tuple(result[2] for result in results),
        source=source,
        ciLow=tuple(result[3] for result in results),
        ciHigh=tuple(result[4] for result in results)
    )

def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("correlation needs two 1-D sequences of equal length")
    if len(x) < 3:
        raise ValueError("correlation needs at least 3 pairs")
    return x, y

def pearson(x, y):
    """
    Product-moment correlation, None when either series is constant.
    Args:
        x: Reals
        y: Reals of the same length (>= 3)
    """
    x, y = _check_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(np.clip(stats.pearsonr(x, y)[0], -1.0, 1.0))

def spearman(x, y):
    """Pearson correlation of midranks."""
    x, y = _check_pair(x, y)
    return pearson(stats.rankdata(x), stats.rankdata(y))

def correlate(x, y, labelA="a", labelB="b", aggregation=""):
    """
    Both correlations of two matched series.
    Args:
        x: Reals
        y: Reals
        labelA: Name of the first series
        labelB: Name of the second series
        aggregation: How the series were produced
    """
    r = pearson(x, y)
    rho = spearman(x, y)
    if r is None or rho is None:
        log_warning(f"correlation of {labelA} and {labelB} undefined (constant series)")
    return CorrelationReport(pearson=r, spearman=rho, n=len(x), labelA=labelA, labelB=labelB, aggregation=aggregation)

def summary_score(report, tags=None):
    """
    Mean of the defined AUCs over a tag subset (all tags by default).
    Args:
        report: EvalReport
        tags: Tags to average over
    """
    values = [report.auc_of(tag) for tag in (tags or report.tags)]
    values = [value for value in values if value is not None]
    if not values:
        raise UndefinedStatisticError("no defined AUC among the requested tags")
    return float(np.mean(values))

def reliability_pair(reportsA, reportsB, labelA="a", labelB="b", tags=None, aggregation="mean_auc"):
    """
    Pearson correlation across matched runs of two scalar score series.
    Args:
        reportsA: Sequence of EvalReport or floats
        reportsB: Sequence of EvalReport or floats, same length
        labelA: Name of the first series
        labelB: Name of the second series
        tags: Tag subset used when summarizing EvalReports
        aggregation: Aggregation name recorded in the report
    """
    if len(reportsA) != len(reportsB):
        raise TagNoiseError(f"run counts differ: {len(reportsA)} vs {len(reportsB)}")

    def scalar(item):
        return summary_score(item, tags) if isinstance(item, EvalReport) else float(item)

    seriesA = [scalar(item) for item in reportsA]
    seriesB = [scalar(item) for item in reportsB]
    name = aggregation if tags is None else f"{aggregation}[{','.join(tags)}]"
    return correlate(seriesA, seriesB, labelA, labelB, aggregation=name)

def popularity_correlation(report, vocab):
    """
    Spearman correlation between popularity rank and per-tag AUC over defined tags.
    Args:
        report: EvalReport
        vocab: TagVocabulary giving the popularity order
    """
    ranks = []
    values = []
    for tag, value in zip(report.tags, report.aucs):
        if value is not None:
            ranks.append(vocab.resolve(tag) + 1)
            values.append(value)
    return correlate(ranks, values, "popularity_rank", "auc", aggregation="per_tag")

def _fmt(value, digits=6):
    return "" if value is None else f"{value:.{digits}f}"

def write_eval_report(report, path, seed=None, delimiter=","):
    """
    Report table: one row per tag, then macro AUC and reference-source footer rows.
    Args:
        report: EvalReport
        path: Output path
        seed: Seed recorded in the provenance header
        delimiter: ',' or tab
    """
    header = ["tag", "n_pos", "n_neg", "auc", "ci_low", "ci_high", "defined"]
    ciLow = report.ciLow or (None,) * len(report.tags)
    ciHigh = report.ciHigh or (None,) * len(report.tags)
    rows = [
        [tag, nPos, nNeg, _fmt(value), _fmt(low), _fmt(high), str(value is not None).lower()]
        for tag, nPos, nNeg, value, low, high in zip(report.tags, report.nPos, report.nNeg, report.aucs, ciLow, ciHigh)
    ]
    rows.append(["macro_auc", sum(report.nPos), sum(report.nNeg), _fmt(report.macroAuc), "", "", str(report.macroAuc is not None).lower()])
    rows.append(["reference_source", "", "", report.source, "", "", ""])
    write_table(path, header, rows, seed=seed, delimiter=delimiter)
    log_artifact(path, "evaluation report")
    return path

def read_score_column(path, column="auc"):
    """
    Read {key: value} from a delimited table, skipping '#' lines, footer rows and empty values.
    Args:
        path: CSV or TSV path (delimiter from the extension)
        column: Column holding the values
    """
    delimiter = "\t" if str(path).endswith(".tsv") else ","
    with open(path, "r", encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if not line.lstrip().startswith("#") and line.strip()]
    reader = csv.DictReader(lines, delimiter=delimiter)
    if column not in (reader.fieldnames or []):
        raise TagNoiseError(f"{path} has no '{column}' column")
    keyField = reader.fieldnames[0]
    values = {}
    for row in reader:
        key = row[keyField]
        if key in FOOTER_KEYS or not row[column]:
            continue
        try:
            values[key] = float(row[column])
        except ValueError:
            raise TagNoiseError(f"{path}: non-numeric {column} value '{row[column]}' for '{key}'")
    return values
