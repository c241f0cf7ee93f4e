import numpy as np
import pytest

from utils import TagNoiseError
from groundtruth.cooccur import compute_nco, pair_scores
from analysis.lvs import (
    LabelVectorMatrix,
    SimilarityMatrix,
    compute_lvs,
    rank_lvs_pairs,
    compare_lvs_nco,
    write_lvs_csv,
    write_divergences
)


def test_gram_matrix_properties():
    weights = np.random.default_rng(4).normal(size=(16, 5))
    sim = compute_lvs(LabelVectorMatrix(weights, [f"t{k}" for k in range(5)]))
    assert np.array_equal(sim.values, sim.values.T)
    assert np.allclose(sim.values, weights.T @ weights)
    assert np.all(np.linalg.eigvalsh(sim.values) > -1e-9)
    assert np.allclose(np.diag(sim.values), np.sum(weights ** 2, axis=0))


def test_cosine_similarity_has_unit_diagonal():
    weights = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    sim = compute_lvs(LabelVectorMatrix(weights, ["a", "b", "c"]), cosine=True)
    assert np.allclose(np.diag(sim.values), 1.0)
    assert sim.values[0, 1] == pytest.approx(1.0)
    assert sim.values[0, 2] == pytest.approx(0.0)
    with pytest.raises(TagNoiseError):
        compute_lvs(LabelVectorMatrix(np.zeros((2, 3)), ["a", "b", "c"]), cosine=True)


def test_non_finite_vectors_rejected():
    weights = np.array([[np.nan, 1.0]])
    with pytest.raises(TagNoiseError):
        compute_lvs(LabelVectorMatrix(weights, ["a", "b"]))


def test_pair_ranking():
    weights = np.array([[1.0, 1.0, -1.0], [0.0, 1.0, 0.0]])
    pairs = rank_lvs_pairs(compute_lvs(LabelVectorMatrix(weights, ["a", "b", "c"])))
    # Ties keep index order
    assert pairs == [("a", "b", 1.0), ("a", "c", -1.0), ("b", "c", -1.0)]


def test_comparison_with_cooccurrence(toy_matrix):
    nco = compute_nco(toy_matrix)
    # rock and guitar alike, loud opposite
    weights = np.array([[1.0, 0.9, -1.0], [0.1, 0.2, 0.3]])
    sim = compute_lvs(LabelVectorMatrix(weights, toy_matrix.vocab.tags))
    comparison = compare_lvs_nco(sim, nco, lvsTop=1, ncoBottom=1, overlapK=1)
    assert comparison.nPairs == 3
    assert comparison.negativePairs == 2
    # Top pair by both rankings is rock-guitar
    assert comparison.overlap == 1
    assert [(d.tagI, d.tagJ) for d in comparison.divergences] == [("rock", "guitar")]


def test_comparison_requires_same_vocabulary(toy_matrix):
    nco = compute_nco(toy_matrix)
    sim = compute_lvs(LabelVectorMatrix(np.eye(3), ["loud", "rock", "guitar"]))
    with pytest.raises(TagNoiseError):
        compare_lvs_nco(sim, nco)


def test_exports(toy_matrix, tmp_path):
    sim = compute_lvs(LabelVectorMatrix(np.array([[0.5, 0.1, 0.0]]), toy_matrix.vocab.tags))
    path = write_lvs_csv(sim, tmp_path / "lvs.csv")
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    assert lines[0] == "tag,rock,guitar,loud"
    assert lines[1] == "rock,25.0,5.0,0.0"

    comparison = compare_lvs_nco(sim, compute_nco(toy_matrix), lvsTop=3, ncoBottom=1)
    out = write_divergences(comparison, tmp_path / "div.tsv")
    rows = [line for line in out.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    assert rows[0].split("\t") == ["tag_i", "tag_j", "lvs_rank", "nco_rank", "lvs", "nco"]
    assert len(rows) == 4


def random_label_vectors(rng, nTags=50, size=32):
    return LabelVectorMatrix(rng.normal(size=(size, nTags)), [f"tag{k}" for k in range(nTags)])


def test_random_gram_matrices_rank_and_permutation():
    rng = np.random.default_rng(31)
    for _ in range(100):
        vectors = random_label_vectors(rng)
        sim = compute_lvs(vectors)
        eigenvalues = np.sort(np.linalg.eigvalsh(sim.values))[::-1]
        # 32-dimensional label vectors cannot span more than 32 directions
        assert abs(eigenvalues[32]) <= 1e-9 * eigenvalues[0]
        assert eigenvalues[31] > 1e-6 * eigenvalues[0]

        order = rng.permutation(50)
        permuted = compute_lvs(LabelVectorMatrix(vectors.weights[:, order], [vectors.tags[k] for k in order]))
        assert np.allclose(permuted.values, sim.values[np.ix_(order, order)])


def test_unrelated_cooccurrence_stays_in_null_band(matrix_factory):
    rng = np.random.default_rng(32)
    for _ in range(20):
        sim = compute_lvs(random_label_vectors(rng))
        nco = compute_nco(matrix_factory((rng.random((300, 50)) < 0.3).astype(np.uint8)))
        comparison = compare_lvs_nco(sim, nco)
        assert comparison.nPairs == 50 * 49 // 2
        assert abs(comparison.correlation.pearson) <= 0.28
        assert abs(comparison.correlation.spearman) <= 0.28


def test_similarity_built_from_cooccurrence_correlates_fully(matrix_factory):
    rng = np.random.default_rng(33)
    for _ in range(20):
        nco = compute_nco(matrix_factory((rng.random((300, 12)) < 0.3).astype(np.uint8)))
        sim = SimilarityMatrix(values=pair_scores(nco), tags=nco.vocab.tags)
        comparison = compare_lvs_nco(sim, nco)
        assert comparison.correlation.pearson == pytest.approx(1.0)
        assert comparison.correlation.spearman == pytest.approx(1.0)
        assert comparison.overlap == comparison.overlapK
