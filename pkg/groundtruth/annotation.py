"""
annotation.py
Annotation records, subset sampling for re-annotation, and the annotation TSV format.
"""
from dataclasses import dataclass

import numpy as np

from config import (
    DEFAULT_ANNOTATOR,
    VERDICT_TOKENS,
    VERDICT_WRITE,
    VERDICT_SKIP,
    SUBSET_KIND_PATTERN,
    COMMENT_PATTERN
)
from logger import log_event, log_artifact
from utils import TagNoiseError, ParseError, SamplingError, make_rng, provenance_lines


@dataclass(frozen=True)
class AnnotationRecord:
    """One (track, tag) verdict; verdict is 0, 1, None (pending) or -1 (skipped)."""
    trackId: str
    tag: str
    verdict: object = None
    annotator: str = DEFAULT_ANNOTATOR

    @property
    def answered(self):
        return self.verdict in (0, 1)


@dataclass(frozen=True)
class AnnotationSet:
    records: tuple
    subsetKind: str = "random"

    def __post_init__(self):
        if self.subsetKind not in ("balanced", "random"):
            raise TagNoiseError(f"unknown subset kind '{self.subsetKind}'")
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def for_tag(self, tag):
        """
        Records of one tag, in file order.
        Args:
            tag: Tag string
        """
        return [record for record in self.records if record.tag == tag]

    def tags(self):
        """Distinct tags in first-seen order."""
        seen = []
        for record in self.records:
            if record.tag not in seen:
                seen.append(record.tag)
        return seen


def validate_annotations(annotations, matrix):
    """
    Check annotation records against a label matrix.
    Args:
        annotations: AnnotationSet
        matrix: LabelMatrix the annotations refer to
    """
    seen = set()
    for record in annotations.records:
        key = (record.trackId, record.tag, record.annotator)
        if key in seen:
            raise TagNoiseError(
                f"duplicate verdict for track '{record.trackId}', tag '{record.tag}', "
                f"annotator '{record.annotator}'"
            )
        seen.add(key)
        if record.trackId not in matrix.trackIndex:
            raise TagNoiseError(f"annotated track '{record.trackId}' is not in the label matrix")
        if record.tag not in matrix.vocab.index:
            raise TagNoiseError(f"annotated tag '{record.tag}' is not in the vocabulary")
    return annotations

def sample_balanced_subset(matrix, tag, nPerClass, split, seed, annotator=DEFAULT_ANNOTATOR):
    """
    Draw n groundtruth-positive and n groundtruth-negative tracks for one tag.
    Args:
        matrix: LabelMatrix
        tag: Tag string or id
        nPerClass: Items per class
        split: Split to sample from ('all' for every track)
        seed: Integer seed
        annotator: Annotator name written into the pending records
    """
    tagId = matrix.vocab.resolve(tag)
    tagName = matrix.vocab.tags[tagId]
    inSplit = matrix.split_mask(split)
    column = matrix.tag_column(tagId)
    positives = np.flatnonzero(inSplit & column)
    negatives = np.flatnonzero(inSplit & ~column)

    if len(positives) < nPerClass:
        raise SamplingError(f"insufficient positive items ({len(positives)} < {nPerClass})")
    if len(negatives) < nPerClass:
        raise SamplingError(f"insufficient negative items ({len(negatives)} < {nPerClass})")

    rng = make_rng(seed)
    chosen = np.concatenate([
        rng.choice(positives, size=nPerClass, replace=False),
        rng.choice(negatives, size=nPerClass, replace=False),
    ])
    # Annotators must not see the groundtruth class from the ordering
    chosen = chosen[rng.permutation(len(chosen))]

    records = [
        AnnotationRecord(trackId=matrix.trackIds[row], tag=tagName, verdict=None, annotator=annotator)
        for row in chosen
    ]
    log_event(f"Sampled balanced subset for '{tagName}': {nPerClass} + {nPerClass} items from {split}")
    return AnnotationSet(records=records, subsetKind="balanced")

def sample_random_subset(matrix, n, split, seed, tags=None, annotator=DEFAULT_ANNOTATOR):
    """
    Draw n tracks uniformly without replacement; one pending record per (track, tag).
    Args:
        matrix: LabelMatrix
        n: Number of tracks
        split: Split to sample from ('all' for every track)
        seed: Integer seed
        tags: Tags to annotate per track (default: whole vocabulary)
        annotator: Annotator name written into the pending records
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    candidates = np.flatnonzero(matrix.split_mask(split))
    if n > len(candidates):
        raise SamplingError(f"requested {n} tracks but split '{split}' has only {len(candidates)}")

    tagNames = [matrix.vocab.tags[matrix.vocab.resolve(tag)] for tag in (tags or matrix.vocab.tags)]
    rng = make_rng(seed)
    chosen = rng.choice(candidates, size=n, replace=False)

    records = [
        AnnotationRecord(trackId=matrix.trackIds[row], tag=tagName, verdict=None, annotator=annotator)
        for row in chosen
        for tagName in tagNames
    ]
    log_event(f"Sampled random subset: {n} tracks x {len(tagNames)} tags from {split}")
    return AnnotationSet(records=records, subsetKind="random")

def write_annotations(annotations, path, seed=None):
    """
    Write an AnnotationSet as 'track_id<TAB>tag<TAB>verdict<TAB>annotator' lines.
    Args:
        annotations: AnnotationSet (pending verdicts written as '?', skips as 'skip')
        path: Output path
        seed: Seed recorded in the provenance header
    """
    lines = provenance_lines(seed)
    lines.append(f"# subset_kind: {annotations.subsetKind}")
    for record in annotations.records:
        lines.append(f"{record.trackId}\t{record.tag}\t{VERDICT_WRITE[record.verdict]}\t{record.annotator}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    log_artifact(path, "annotation set")
    return path

def read_annotations(path, matrix=None):
    """
    Read an annotation TSV, optionally validating it against a label matrix.
    Args:
        path: TSV path
        matrix: LabelMatrix to validate against (optional)
    """
    records = []
    subsetKind = "random"
    with open(path, "r", encoding="utf-8") as handle:
        for lineNumber, raw in enumerate(handle, 1):
            line = raw.rstrip("\r\n")
            kindMatch = SUBSET_KIND_PATTERN.match(line)
            if kindMatch:
                subsetKind = kindMatch.group(1)
                continue
            if COMMENT_PATTERN.match(line):
                continue

            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated columns, got {len(fields)}", path, lineNumber)
            trackId, tag, token, annotator = fields
            token = token.strip()
            if token not in VERDICT_TOKENS:
                raise ParseError(f"unknown verdict '{token}' (expected 0, 1, ? or skip)", path, lineNumber)
            records.append(AnnotationRecord(trackId, tag, VERDICT_TOKENS[token], annotator))

    annotations = AnnotationSet(records=records, subsetKind=subsetKind)
    if matrix is not None:
        validate_annotations(annotations, matrix)
    return annotations

def count_skipped(records):
    """
    Number of skipped and pending records.
    Args:
        records: Iterable of AnnotationRecord
    """
    skipped = sum(1 for record in records if record.verdict == VERDICT_SKIP)
    pending = sum(1 for record in records if record.verdict is None)
    return skipped, pending
