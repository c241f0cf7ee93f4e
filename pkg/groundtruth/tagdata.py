"""
tagdata.py
Track-tag groundtruth: vocabularies, label matrices, splits and the TAGM file format.
"""
import struct
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from config import SPLIT_CODES, SPLIT_NAMES, TAGM_MAGIC, TAGM_VERSION
from logger import log_event, log_warning, log_artifact
from utils import (
    TagNoiseError,
    ParseError,
    BinaryReader,
    data_lines,
    pack_string,
    write_sidecar,
    provenance_lines
)


@dataclass(frozen=True)
class TagVocabulary:
    """Ordered tag list with its inverse index and the occurrence counts it was built from."""
    tags: tuple
    counts: tuple = ()
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tags = tuple(self.tags)
        if any(not tag for tag in tags):
            raise TagNoiseError("tag strings must be non-empty")
        if len(set(tags)) != len(tags):
            raise TagNoiseError("tag strings must be unique")
        counts = tuple(int(c) for c in self.counts) if self.counts else (0,) * len(tags)
        if len(counts) != len(tags):
            raise TagNoiseError("vocabulary counts do not match the tag list")
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "index", {tag: i for i, tag in enumerate(tags)})

    def __len__(self):
        return len(self.tags)

    def resolve(self, tag):
        """
        Map a tag string or integer id to the integer id.
        Args:
            tag: Tag string or column index
        """
        if isinstance(tag, (int, np.integer)):
            if not 0 <= int(tag) < len(self.tags):
                raise TagNoiseError(f"tag id {tag} out of range (vocabulary has {len(self.tags)} tags)")
            return int(tag)
        if tag not in self.index:
            raise TagNoiseError(f"unknown tag '{tag}'")
        return self.index[tag]


@dataclass(frozen=True)
class LabelMatrix:
    """Sparse binary track x tag matrix with split assignments. Treated as immutable."""
    trackIds: tuple
    vocab: TagVocabulary
    labels: sparse.csr_matrix
    split: np.ndarray
    trackIndex: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        trackIds = tuple(self.trackIds)
        if len(set(trackIds)) != len(trackIds):
            raise TagNoiseError("track ids must be unique")
        if self.labels.shape != (len(trackIds), len(self.vocab)):
            raise TagNoiseError(
                f"label shape {self.labels.shape} does not match "
                f"{len(trackIds)} tracks x {len(self.vocab)} tags"
            )
        split = np.asarray(self.split, dtype=np.uint8).copy()
        if split.shape != (len(trackIds),):
            raise TagNoiseError("split array must have one entry per track")
        split.setflags(write=False)
        object.__setattr__(self, "trackIds", trackIds)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "trackIndex", {trackId: i for i, trackId in enumerate(trackIds)})

    @property
    def nTracks(self):
        return len(self.trackIds)

    def counts(self):
        """Occurrence count #y_i of every tag (column sums)."""
        return np.asarray(self.labels.sum(axis=0), dtype=np.int64).ravel()

    def n_plus(self, tag):
        """
        Positive count N+ of one tag.
        Args:
            tag: Tag string or id
        """
        return int(self.counts()[self.vocab.resolve(tag)])

    def dense(self):
        """Dense uint8 copy of the labels."""
        return self.labels.toarray().astype(np.uint8)

    def tag_column(self, tag):
        """
        Boolean column of one tag.
        Args:
            tag: Tag string or id
        """
        column = self.labels[:, self.vocab.resolve(tag)].toarray().ravel()
        return column.astype(bool)

    def split_mask(self, split="all"):
        """
        Boolean mask of tracks belonging to a split ('all' selects every track).
        Args:
            split: Split name or 'all'
        """
        if split in (None, "all"):
            return np.ones(self.nTracks, dtype=bool)
        if split not in SPLIT_CODES:
            raise TagNoiseError(f"unknown split '{split}'")
        return self.split == SPLIT_CODES[split]

    def rows_for(self, trackIds):
        """
        Row indices of the given tracks.
        Args:
            trackIds: Iterable of track id strings
        """
        rows = []
        missing = []
        for trackId in trackIds:
            row = self.trackIndex.get(trackId)
            if row is None:
                missing.append(trackId)
            else:
                rows.append(row)
        if missing:
            preview = ", ".join(missing[:5])
            raise TagNoiseError(f"{len(missing)} tracks not in the label matrix: {preview}")
        return np.asarray(rows, dtype=np.int64)

    def targets_for(self, trackIds):
        """
        Dense float targets for the given tracks, rows in the given order.
        Args:
            trackIds: Iterable of track id strings
        """
        return self.labels[self.rows_for(trackIds)].toarray().astype(np.float64)


def build_vocabulary(tagCounts, topN):
    """
    Select the top-N tags by occurrence, ties broken lexicographically.
    Args:
        tagCounts: Mapping tag -> occurrence count
        topN: Number of tags to keep
    """
    if topN < 1:
        raise ValueError("top_n must be at least 1")
    if topN > len(tagCounts):
        raise TagNoiseError(f"top_n={topN} exceeds the {len(tagCounts)} distinct tags in the input")
    ranked = sorted(tagCounts.items(), key=lambda item: (-item[1], item[0]))[:topN]
    return TagVocabulary(tags=[tag for tag, _ in ranked], counts=[count for _, count in ranked])

def build_label_matrix(trackIds, trackTags, vocab, split=None):
    """
    Assemble a LabelMatrix from per-track tag lists.
    Args:
        trackIds: Ordered track ids
        trackTags: Mapping track id -> iterable of tags (tags outside vocab ignored)
        vocab: TagVocabulary
        split: Optional per-track split codes
    """
    rows = []
    cols = []
    for row, trackId in enumerate(trackIds):
        tagIds = sorted({vocab.index[tag] for tag in trackTags.get(trackId, ()) if tag in vocab.index})
        rows.extend([row] * len(tagIds))
        cols.extend(tagIds)
    data = np.ones(len(rows), dtype=np.uint8)
    labels = sparse.csr_matrix(
        (data, (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(len(trackIds), len(vocab)),
        dtype=np.uint8
    )
    labels.sum_duplicates()
    labels.sort_indices()
    if split is None:
        split = np.zeros(len(trackIds), dtype=np.uint8)
    return LabelMatrix(trackIds=tuple(trackIds), vocab=vocab, labels=labels, split=split)

def labels_from_dense(trackIds, vocab, dense, split=None):
    """
    Build a LabelMatrix from a dense 0/1 array.
    Args:
        trackIds: Ordered track ids
        vocab: TagVocabulary matching the columns
        dense: (n_tracks, n_tags) array, nonzero = applied
        split: Optional per-track split codes
    """
    labels = sparse.csr_matrix((np.asarray(dense) != 0).astype(np.uint8))
    labels.eliminate_zeros()
    labels.sort_indices()
    if split is None:
        split = np.zeros(len(trackIds), dtype=np.uint8)
    return LabelMatrix(trackIds=tuple(trackIds), vocab=vocab, labels=labels, split=split)

def ingest_edge_list(path, topN):
    """
    Read a 'track_id<TAB>tag' edge list and keep the top-N tags.
    Args:
        path: UTF-8 TSV file, one tag application per line
        topN: Vocabulary size
    """
    trackOrder = []
    trackTags = defaultdict(list)
    tagCounts = defaultdict(int)
    seenPairs = set()
    nDuplicates = 0

    for lineNumber, line in data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated columns, got {len(fields)}", path, lineNumber)
        trackId, tag = fields
        if not trackId or not tag:
            raise ParseError("empty track id or tag", path, lineNumber)

        if trackId not in trackTags:
            trackOrder.append(trackId)
        if (trackId, tag) in seenPairs:
            nDuplicates += 1
            continue
        seenPairs.add((trackId, tag))
        trackTags[trackId].append(tag)
        tagCounts[tag] += 1

    vocab = build_vocabulary(tagCounts, topN)

    # Tracks without any top-N tag are dropped
    kept = [trackId for trackId in trackOrder if any(tag in vocab.index for tag in trackTags[trackId])]
    matrix = build_label_matrix(kept, trackTags, vocab)

    log_event(
        f"Ingested {path}: {len(trackOrder)} tracks, {len(tagCounts)} distinct tags, "
        f"{nDuplicates} duplicate lines; kept {len(kept)} tracks with top {topN} tags"
    )
    return matrix

def write_edge_list(matrix, path, seed=None):
    """
    Write a LabelMatrix back to the canonical edge-list format.
    Args:
        matrix: LabelMatrix
        path: Output TSV path
        seed: Seed recorded in the provenance header
    """
    lines = provenance_lines(seed)
    indptr, indices = matrix.labels.indptr, matrix.labels.indices
    for row, trackId in enumerate(matrix.trackIds):
        for col in indices[indptr[row]:indptr[row + 1]]:
            lines.append(f"{trackId}\t{matrix.vocab.tags[col]}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    log_artifact(path, "edge list")
    return path

def split_counts(matrix):
    """Number of tracks per split."""
    return {name: int(np.sum(matrix.split == code)) for name, code in SPLIT_CODES.items()}

def assign_splits(matrix, splitFile):
    """
    Attach train/valid/test assignments from a 'track_id<TAB>split' file.
    Args:
        matrix: LabelMatrix
        splitFile: TSV path; unlisted tracks stay 'none'
    """
    split = np.zeros(matrix.nTracks, dtype=np.uint8)
    assigned = {}
    nUnknown = 0

    for lineNumber, line in data_lines(splitFile):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated columns, got {len(fields)}", splitFile, lineNumber)
        trackId, token = fields
        token = token.strip()
        if token not in ("train", "valid", "test"):
            raise ParseError(f"unknown split token '{token}'", splitFile, lineNumber)

        row = matrix.trackIndex.get(trackId)
        if row is None:
            nUnknown += 1
            continue
        if trackId in assigned and assigned[trackId] != token:
            raise ParseError(f"track '{trackId}' assigned to both {assigned[trackId]} and {token}", splitFile, lineNumber)
        assigned[trackId] = token
        split[row] = SPLIT_CODES[token]

    if nUnknown:
        log_warning(f"{nUnknown} tracks in {splitFile} are absent from the label matrix and were skipped")

    result = replace(matrix, split=split)
    counts = split_counts(result)
    log_event(
        f"Split counts: train={counts['train']} valid={counts['valid']} "
        f"test={counts['test']} none={counts['none']}"
    )
    return result

def audit_matrix(matrix):
    """
    Summary statistics of a label matrix.
    Args:
        matrix: LabelMatrix
    """
    counts = matrix.counts()
    perTrack = np.diff(matrix.labels.indptr)
    indptr, indices = matrix.labels.indptr, matrix.labels.indices
    uniqueVectors = {tuple(indices[indptr[r]:indptr[r + 1]]) for r in range(matrix.nTracks)}
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], matrix.vocab.tags[i]))
    summary = {
        "n_tracks": matrix.nTracks,
        "n_tags": len(matrix.vocab),
        "n_positive_labels": int(counts.sum()),
        "mean_tags_per_track": float(perTrack.mean()) if matrix.nTracks else 0.0,
        "tracks_without_tags": int(np.sum(perTrack == 0)),
        "unique_tag_vectors": len(uniqueVectors),
        "splits": split_counts(matrix),
    }
    if len(order):
        summary["most_popular"] = (matrix.vocab.tags[order[0]], int(counts[order[0]]))
        summary["least_popular"] = (matrix.vocab.tags[order[-1]], int(counts[order[-1]]))
    return summary

def write_label_matrix(matrix, path, seed=None):
    """
    Serialize a LabelMatrix to the little-endian TAGM format.
    Args:
        matrix: LabelMatrix
        path: Output path
        seed: Seed recorded in the sidecar
    """
    labels = matrix.labels
    chunks = [TAGM_MAGIC, struct.pack("<I", TAGM_VERSION)]

    chunks.append(struct.pack("<I", len(matrix.vocab)))
    for tag in matrix.vocab.tags:
        chunks.append(pack_string(tag))
    chunks.append(np.asarray(matrix.vocab.counts, dtype="<u4").tobytes())

    chunks.append(struct.pack("<I", matrix.nTracks))
    for trackId in matrix.trackIds:
        chunks.append(pack_string(trackId))

    chunks.append(struct.pack("<I", labels.nnz))
    chunks.append(labels.indptr.astype("<u4").tobytes())
    chunks.append(labels.indices.astype("<u4").tobytes())
    chunks.append(matrix.split.astype(np.uint8).tobytes())

    with open(path, "wb") as handle:
        handle.write(b"".join(chunks))
    write_sidecar(path, seed)
    log_artifact(path, "label matrix")
    return path

def read_label_matrix(path):
    """
    Load a LabelMatrix written by write_label_matrix.
    Args:
        path: TAGM file path
    """
    with open(path, "rb") as handle:
        reader = BinaryReader(handle.read(), path)

    if reader.take(4) != TAGM_MAGIC:
        raise ParseError("not a TAGM file (bad magic)", path)
    version = reader.u32()
    if version != TAGM_VERSION:
        raise ParseError(f"unsupported TAGM version {version}", path)

    nTags = reader.u32()
    tags = [reader.string() for _ in range(nTags)]
    counts = reader.array("<u4", nTags)
    nTracks = reader.u32()
    trackIds = [reader.string() for _ in range(nTracks)]
    nnz = reader.u32()
    indptr = reader.array("<u4", nTracks + 1).astype(np.int32)
    indices = reader.array("<u4", nnz).astype(np.int32)
    split = reader.array(np.uint8, nTracks)
    if reader.offset != len(reader.data):
        raise ParseError("trailing bytes after split block", path)
    if np.any(split > max(SPLIT_NAMES)):
        raise ParseError("invalid split code", path)

    labels = sparse.csr_matrix(
        (np.ones(nnz, dtype=np.uint8), indices, indptr),
        shape=(nTracks, nTags)
    )
    vocab = TagVocabulary(tags=tags, counts=counts.tolist())
    return LabelMatrix(trackIds=tuple(trackIds), vocab=vocab, labels=labels, split=split)
