"""
cooccur.py
Normalized tag co-occurrence C(i, j) = #(y_i and y_j) / #y_i and pair rankings.
"""
import csv
from dataclasses import dataclass

import numpy as np

from logger import log_warning, log_artifact
from utils import TagNoiseError, ParseError, write_table
from .tagdata import TagVocabulary


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """
    values: K x K normalized co-occurrence (row i = conditioning tag)
    counts: #y_i per tag within the split
    joint: integer joint counts #(y_i and y_j)
    defined: False for rows whose tag never occurs in the split
    """
    values: np.ndarray
    vocab: TagVocabulary
    counts: np.ndarray
    joint: np.ndarray
    defined: np.ndarray
    split: str = "all"


def compute_nco(matrix, split="all"):
    """
    Normalized co-occurrence over the tracks of one split.
    Args:
        matrix: LabelMatrix
        split: Split name or 'all'
    """
    rows = np.flatnonzero(matrix.split_mask(split))
    if len(rows) == 0:
        raise TagNoiseError(f"split '{split}' has no tracks")

    occurrence = matrix.labels[rows].astype(np.int64)
    joint = np.asarray((occurrence.T @ occurrence).toarray(), dtype=np.int64)
    return nco_from_joint(joint, matrix.vocab, split)

def nco_from_joint(joint, vocab, split="all"):
    """
    CooccurrenceMatrix from integer joint counts (diagonal = #y_i).
    Args:
        joint: K x K symmetric integer matrix
        vocab: TagVocabulary of the K tags
        split: Split the counts were taken over
    """
    joint = np.asarray(joint, dtype=np.int64)
    if joint.shape != (len(vocab), len(vocab)):
        raise TagNoiseError(f"joint counts of shape {joint.shape} for {len(vocab)} tags")
    counts = np.diag(joint).copy()
    defined = counts > 0

    # Integer counts throughout, one division at the end
    values = np.zeros(joint.shape, dtype=np.float64)
    values[defined] = joint[defined] / counts[defined][:, None]

    if not defined.all():
        missing = [vocab.tags[i] for i in np.flatnonzero(~defined)]
        log_warning(f"{len(missing)} tags never occur in split '{split}'; their NCO rows are undefined: {missing[:5]}")

    return CooccurrenceMatrix(
        values=values,
        vocab=vocab,
        counts=counts,
        joint=joint,
        defined=defined,
        split=split
    )

def upper_pairs(nTags):
    """
    Index arrays (i, j) of all unordered pairs i < j.
    Args:
        nTags: Matrix size K
    """
    return np.triu_indices(nTags, k=1)

def rank_pairs(scores, k=None):
    """
    Rank unordered pairs by score descending, ties by (i, j) index order.
    Args:
        scores: K x K symmetric score matrix (only i < j is read)
        k: Number of pairs to keep (None keeps all)
    """
    nTags = scores.shape[0]
    nPairs = nTags * (nTags - 1) // 2
    if k is None:
        k = nPairs
    if k > nPairs:
        raise ValueError(f"k={k} exceeds the {nPairs} available pairs")

    iIdx, jIdx = upper_pairs(nTags)
    pairScores = scores[iIdx, jIdx]
    order = np.lexsort((jIdx, iIdx, -pairScores))[:k]
    return iIdx[order], jIdx[order], pairScores[order]

def pair_scores(nco):
    """Symmetric score matrix max(C(i, j), C(j, i)) used for ranking."""
    return np.maximum(nco.values, nco.values.T)

def top_pairs(nco, k):
    """
    Top-k tag pairs by max(C(i, j), C(j, i)), diagonal excluded.
    Args:
        nco: CooccurrenceMatrix
        k: Number of pairs
    """
    iIdx, jIdx, scores = rank_pairs(pair_scores(nco), k)
    tags = nco.vocab.tags
    return [(tags[i], tags[j], float(score)) for i, j, score in zip(iIdx, jIdx, scores)]

def subset_nco(nco, tags):
    """
    Restrict an NCO to a chosen tag subset, keeping the given order.
    Args:
        nco: CooccurrenceMatrix
        tags: Tag strings to keep
    """
    ids = [nco.vocab.resolve(tag) for tag in tags]
    sub = np.ix_(ids, ids)
    vocab = TagVocabulary(
        tags=[nco.vocab.tags[i] for i in ids],
        counts=[nco.vocab.counts[i] for i in ids]
    )
    return CooccurrenceMatrix(
        values=nco.values[sub],
        vocab=vocab,
        counts=nco.counts[ids],
        joint=nco.joint[sub],
        defined=nco.defined[ids],
        split=nco.split
    )

def write_nco_csv(nco, path, seed=None):
    """
    Export C as CSV: header row of tags, then K rows at 6 decimal places.
    Args:
        nco: CooccurrenceMatrix
        path: Output path
        seed: Seed recorded in the provenance header
    """
    rows = ([f"{value:.6f}" for value in row] for row in nco.values)
    header = [_csv_field(tag) for tag in nco.vocab.tags]
    write_table(path, header, rows, seed=seed, extra={"split": nco.split})
    log_artifact(path, "co-occurrence matrix")
    return path

def _csv_field(text):
    if any(ch in text for ch in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text

def write_joint_csv(nco, path, seed=None):
    """
    Export the integer joint counts, from which the whole CooccurrenceMatrix can be rebuilt.
    Args:
        nco: CooccurrenceMatrix
        path: Output path
        seed: Seed recorded in the provenance header
    """
    rows = ([str(int(value)) for value in row] for row in nco.joint)
    header = [_csv_field(tag) for tag in nco.vocab.tags]
    write_table(path, header, rows, seed=seed, extra={"split": nco.split})
    log_artifact(path, "co-occurrence counts")
    return path

def read_joint_csv(path):
    """
    Rebuild a CooccurrenceMatrix from a file written by write_joint_csv.
    Args:
        path: CSV path
    """
    split = "all"
    lines = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for line in handle:
            if line.startswith("# split:"):
                split = line.split(":", 1)[1].strip() or "all"
            elif not line.lstrip().startswith("#") and line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise ParseError("empty co-occurrence file", path)
    tags = rows[0]
    try:
        joint = np.array([[int(value) for value in row] for row in rows[1:]], dtype=np.int64)
    except ValueError:
        raise ParseError("joint counts must be integers", path)
    if joint.shape != (len(tags), len(tags)):
        raise ParseError(f"expected a {len(tags)} x {len(tags)} count matrix", path)
    vocab = TagVocabulary(tags=tags, counts=np.diag(joint).tolist())
    return nco_from_joint(joint, vocab, split)
