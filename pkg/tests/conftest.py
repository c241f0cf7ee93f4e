import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import config
from groundtruth.tagdata import TagVocabulary, labels_from_dense


@pytest.fixture(autouse=True)
def _process_flags():
    """Reset process-wide flags between tests."""
    config._threadCount = 1
    config._commandLine = "tagnoise test"
    yield
    config._threadCount = 1
    config._commandLine = ""


def make_matrix(dense, tags=None, split=None, prefix="t"):
    dense = np.asarray(dense)
    tags = tags or [f"tag{k}" for k in range(dense.shape[1])]
    vocab = TagVocabulary(tags=tags, counts=dense.sum(axis=0).tolist())
    trackIds = [f"{prefix}{i:03d}" for i in range(dense.shape[0])]
    return labels_from_dense(trackIds, vocab, dense, split)


@pytest.fixture
def toy_matrix():
    """Four tracks, three tags, two tracks per split half."""
    dense = [
        [1, 1, 0],
        [1, 0, 0],
        [0, 1, 1],
        [1, 1, 1],
    ]
    return make_matrix(dense, tags=["rock", "guitar", "loud"], split=[1, 1, 3, 3])


@pytest.fixture
def edge_file(tmp_path):
    path = tmp_path / "edges.tsv"
    path.write_text(
        "# toy edge list\n"
        "a\trock\n"
        "a\tguitar\n"
        "b\trock\n"
        "b\trock\n"
        "c\tjazz\n"
        "c\tpiano\n"
        "d\tguitar\n"
        "\n"
        "e\trock\n",
        encoding="utf-8"
    )
    return path


@pytest.fixture
def matrix_factory():
    return make_matrix
