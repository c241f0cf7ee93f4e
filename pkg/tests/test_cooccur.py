import numpy as np
import pytest

from groundtruth.cooccur import compute_nco, top_pairs, subset_nco, rank_pairs, write_nco_csv


def test_hand_computed_values(toy_matrix):
    nco = compute_nco(toy_matrix)
    # rock: t000 t001 t003; guitar: t000 t002 t003; loud: t002 t003
    expected = np.array([
        [1.0, 2 / 3, 1 / 3],
        [2 / 3, 1.0, 2 / 3],
        [1 / 2, 1 / 2, 1.0],
    ])
    assert np.allclose(nco.values, expected)
    assert nco.counts.tolist() == [3, 3, 2]
    assert nco.defined.all()


def test_matches_brute_force(matrix_factory):
    rng = np.random.default_rng(7)
    dense = (rng.random((60, 6)) < 0.35).astype(np.uint8)
    nco = compute_nco(matrix_factory(dense))
    for i in range(6):
        for j in range(6):
            counts = dense[:, i].sum()
            if counts:
                assert nco.values[i, j] == pytest.approx(np.sum(dense[:, i] & dense[:, j]) / counts)
    assert np.allclose(np.diag(nco.values)[nco.defined], 1.0)
    assert np.all((nco.values >= 0) & (nco.values <= 1))


def test_agrees_with_counting_on_random_matrices(matrix_factory):
    rng = np.random.default_rng(21)
    for _ in range(200):
        nTracks = int(rng.integers(5, 80))
        nTags = int(rng.integers(2, 9))
        dense = (rng.random((nTracks, nTags)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
        nco = compute_nco(matrix_factory(dense))
        counts = dense.sum(axis=0)
        joint = dense.T.astype(np.int64) @ dense
        assert nco.counts.tolist() == counts.tolist()
        assert nco.defined.tolist() == (counts > 0).tolist()
        for i in np.flatnonzero(counts):
            assert np.allclose(nco.values[i], joint[i] / counts[i])
        # the joint count is symmetric even though the ratio is not
        assert np.allclose(nco.values * counts[:, None], (nco.values * counts[:, None]).T)
        assert np.all(nco.values[counts == 0] == 0)


def test_split_restriction_and_undefined_rows(toy_matrix):
    nco = compute_nco(toy_matrix, "train")
    # loud never occurs in train
    assert nco.defined.tolist() == [True, True, False]
    assert np.all(nco.values[2] == 0)
    assert nco.values[0, 1] == pytest.approx(0.5)


def test_top_pairs_order_and_ties(toy_matrix):
    pairs = top_pairs(compute_nco(toy_matrix), 3)
    # max(C(i,j), C(j,i)): rock-guitar 2/3, rock-loud 1/2, guitar-loud 2/3
    assert [(a, b) for a, b, _ in pairs] == [("rock", "guitar"), ("guitar", "loud"), ("rock", "loud")]
    assert pairs[0][2] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        top_pairs(compute_nco(toy_matrix), 4)


def test_rank_pairs_breaks_ties_by_index():
    scores = np.ones((4, 4))
    iIdx, jIdx, _ = rank_pairs(scores)
    assert list(zip(iIdx.tolist(), jIdx.tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_subset_keeps_order(toy_matrix):
    nco = subset_nco(compute_nco(toy_matrix), ["loud", "rock"])
    assert nco.vocab.tags == ("loud", "rock")
    assert nco.values[0, 1] == pytest.approx(0.5)
    assert nco.values[1, 0] == pytest.approx(1 / 3)


def test_csv_export(toy_matrix, tmp_path):
    path = tmp_path / "nco.csv"
    write_nco_csv(compute_nco(toy_matrix), path)
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    assert lines[0] == "rock,guitar,loud"
    assert lines[3] == "0.500000,0.500000,1.000000"
