"""
lvs.py
Label vector similarity S = W^T W of the final dense layer and its comparison
against groundtruth co-occurrence rankings.
"""
from dataclasses import dataclass

import numpy as np

from config import DIVERGENCE_LVS_TOP, DIVERGENCE_NCO_BOTTOM, OVERLAP_TOP_K
from logger import log_artifact, log_event
from utils import TagNoiseError, write_table, write_sidecar
from groundtruth.cooccur import rank_pairs, pair_scores, upper_pairs
from .metrics import CorrelationReport, correlate


@dataclass(frozen=True)
class LabelVectorMatrix:
    """weights: (N, K); column k is the label vector of tags[k]"""
    weights: np.ndarray
    tags: tuple
    sourceId: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.tags):
            raise TagNoiseError(f"label vectors {self.weights.shape} do not match {len(self.tags)} tags")


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    tags: tuple
    cosine: bool = False


@dataclass(frozen=True)
class Divergence:
    tagI: str
    tagJ: str
    lvsRank: int
    ncoRank: int
    lvsScore: float
    ncoScore: float


@dataclass(frozen=True)
class LvsComparison:
    """correlation.pearson is over pair ranks, correlation.spearman over raw scores"""
    correlation: object
    divergences: list
    overlap: int
    overlapK: int
    negativePairs: int
    nPairs: int


def compute_lvs(vectors, cosine=False):
    """
    Gram matrix of label vectors, exactly symmetric.
    Args:
        vectors: LabelVectorMatrix
        cosine: Normalize label vectors to unit length first
    """
    weights = np.asarray(vectors.weights, dtype=np.float64)
    if not np.all(np.isfinite(weights)):
        raise TagNoiseError(f"label vectors of '{vectors.sourceId}' contain non-finite values")
    if cosine:
        norms = np.linalg.norm(weights, axis=0)
        if np.any(norms == 0):
            raise TagNoiseError("cosine similarity undefined for zero label vectors")
        weights = weights / norms
    gram = weights.T @ weights
    # Upper triangle mirrored so S == S.T bit for bit
    values = np.triu(gram) + np.triu(gram, 1).T
    return SimilarityMatrix(values=values, tags=vectors.tags, cosine=cosine)

def rank_lvs_pairs(sim, k=None):
    """
    Off-diagonal pairs by similarity, descending, ties by index order.
    Args:
        sim: SimilarityMatrix
        k: Number of pairs (None = all)
    """
    iIdx, jIdx, scores = rank_pairs(sim.values, k)
    return [(sim.tags[i], sim.tags[j], float(score)) for i, j, score in zip(iIdx, jIdx, scores)]

def _pair_ranks(scores):
    """1-based rank of every upper-triangle pair, in upper_pairs order, plus the pair scores."""
    nTags = scores.shape[0]
    iIdx, jIdx, _ = rank_pairs(scores)
    position = {(i, j): rank for rank, (i, j) in enumerate(zip(iIdx.tolist(), jIdx.tolist()), 1)}
    allI, allJ = upper_pairs(nTags)
    ranks = np.asarray([position[(i, j)] for i, j in zip(allI.tolist(), allJ.tolist())], dtype=np.float64)
    return ranks, scores[allI, allJ]

def compare_lvs_nco(sim, nco, lvsTop=DIVERGENCE_LVS_TOP, ncoBottom=DIVERGENCE_NCO_BOTTOM, overlapK=OVERLAP_TOP_K):
    """
    Correlate LVS and NCO pair rankings and list pairs similar by LVS but rare by NCO.
    Args:
        sim: SimilarityMatrix
        nco: CooccurrenceMatrix over the same tags
        lvsTop: Divergent pairs have LVS rank <= lvsTop
        ncoBottom: ... and NCO rank >= ncoBottom
        overlapK: Window for counting pairs in both top-k lists
    """
    if tuple(sim.tags) != tuple(nco.vocab.tags):
        raise TagNoiseError("LVS and NCO vocabularies differ (same tags in the same order required)")
    nTags = len(sim.tags)
    if nTags < 3:
        raise TagNoiseError("ranking comparison needs at least 3 tags")

    lvsRanks, lvsScores = _pair_ranks(sim.values)
    ncoRanks, ncoScores = _pair_ranks(pair_scores(nco))

    rankCorrelation = correlate(lvsRanks, ncoRanks, "lvs_rank", "nco_rank", aggregation="all_pairs")
    scoreCorrelation = correlate(lvsScores, ncoScores, "lvs", "nco", aggregation="all_pairs")
    correlation = CorrelationReport(
        pearson=rankCorrelation.pearson,
        spearman=scoreCorrelation.spearman,
        n=rankCorrelation.n,
        labelA="lvs",
        labelB="nco",
        aggregation="all_pairs"
    )

    allI, allJ = upper_pairs(nTags)
    divergences = [
        Divergence(
            tagI=sim.tags[i],
            tagJ=sim.tags[j],
            lvsRank=int(lvsRank),
            ncoRank=int(ncoRank),
            lvsScore=float(lvsScore),
            ncoScore=float(ncoScore)
        )
        for i, j, lvsRank, ncoRank, lvsScore, ncoScore in zip(allI, allJ, lvsRanks, ncoRanks, lvsScores, ncoScores)
        if lvsRank <= lvsTop and ncoRank >= ncoBottom
    ]
    divergences.sort(key=lambda item: item.lvsRank)

    overlap = int(np.sum((lvsRanks <= overlapK) & (ncoRanks <= overlapK)))
    negativePairs = int(np.sum(lvsScores < 0))
    log_event(
        f"LVS vs NCO: rank correlation {rankCorrelation.pearson}, {overlap} of top {overlapK} shared, "
        f"{len(divergences)} divergent pairs, {negativePairs} negative pairs"
    )
    return LvsComparison(
        correlation=correlation,
        divergences=divergences,
        overlap=overlap,
        overlapK=overlapK,
        negativePairs=negativePairs,
        nPairs=len(lvsRanks)
    )

def write_lvs_csv(sim, path, seed=None, extra=None):
    """
    Similarity matrix as CSV, values x100 at 1 decimal place.
    Args:
        sim: SimilarityMatrix
        path: Output path
        seed: Seed recorded in the provenance header
        extra: Additional provenance fields
    """
    fields = {"scale": "x100", "cosine": sim.cosine}
    fields.update(extra or {})
    rows = ([tag] + [f"{100.0 * value:.1f}" for value in row] for tag, row in zip(sim.tags, sim.values))
    write_table(path, ["tag"] + list(sim.tags), rows, seed=seed, extra=fields)
    log_artifact(path, "label vector similarity")
    return path

def write_lvs_npy(sim, path, seed=None):
    """Full-precision similarity matrix as .npy with a JSON sidecar."""
    np.save(path, sim.values)
    write_sidecar(path, seed, {"tags": list(sim.tags), "cosine": sim.cosine})
    log_artifact(path, "label vector similarity (npy)")
    return path

def write_pairs(pairs, path, seed=None, extra=None, delimiter="\t"):
    """
    Ranked pair list as 'tag_i, tag_j, score' rows.
    Args:
        pairs: List of (tag_i, tag_j, score)
        path: Output path
        seed: Seed recorded in the provenance header
        extra: Additional provenance fields
        delimiter: Field separator
    """
    rows = ([tagI, tagJ, f"{score:.6f}"] for tagI, tagJ, score in pairs)
    write_table(path, ["tag_i", "tag_j", "score"], rows, seed=seed, extra=extra, delimiter=delimiter)
    log_artifact(path, "pair ranking")
    return path

def write_divergences(comparison, path, seed=None, delimiter="\t"):
    """Divergent pair list with both ranks and scores."""
    rows = (
        [item.tagI, item.tagJ, item.lvsRank, item.ncoRank, f"{item.lvsScore:.6f}", f"{item.ncoScore:.6f}"]
        for item in comparison.divergences
    )
    extra = {
        "rank_correlation": comparison.correlation.pearson,
        "score_spearman": comparison.correlation.spearman,
        "top_overlap": f"{comparison.overlap}/{comparison.overlapK}",
        "negative_pairs": comparison.negativePairs,
    }
    write_table(path, ["tag_i", "tag_j", "lvs_rank", "nco_rank", "lvs", "nco"], rows, seed=seed, extra=extra, delimiter=delimiter)
    log_artifact(path, "LVS/NCO divergences")
    return path
