"""Tests for discretization, mutual information and greedy feature selection."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from cough_counter.errors import SelectionError, ValidationError
from cough_counter.selection import (
    DiscretizedMatrix,
    apply_edges,
    discretize,
    entropy,
    greedy_select,
    load_selection,
    mutual_information,
    save_selection,
    select_features,
)


def _reference_greedy(bins: np.ndarray, labels: np.ndarray, k: int) -> list:
    relevance = [mutual_information(col, labels) for col in bins.T]
    chosen: list = []
    for _ in range(k):
        best, best_score = None, -np.inf
        for j in range(bins.shape[1]):
            if j in chosen:
                continue
            redundancy = np.mean([mutual_information(bins[:, j], bins[:, s]) for s in chosen]) if chosen else 0.0
            score = relevance[j] - redundancy
            if score > best_score + 1e-12:
                best, best_score = j, score
        chosen.append(best)
    return chosen


def test_equal_frequency_bins():
    """3200 distinct values fall 100 to each of 32 bins."""
    column = np.random.default_rng(0).permutation(3200).astype(float)
    d = discretize(column[:, None], 32)
    counts = np.bincount(d.bins[:, 0], minlength=32)
    assert np.all(counts == 100)
    assert not d.degenerate[0]


def test_constant_column_is_degenerate():
    """A constant column collapses to one bin."""
    values = np.column_stack([np.full(100, 2.5), np.arange(100.0)])
    d = discretize(values, 8)
    assert d.degenerate.tolist() == [True, False]
    assert np.all(d.bins[:, 0] == 0)


def test_too_few_frames():
    """Fewer frames than bins cannot be discretized."""
    with pytest.raises(ValidationError):
        discretize(np.zeros((10, 2)), 32)


def test_held_out_values_clamped():
    """Values outside the training range land in the extreme bins."""
    train = np.arange(3200.0)
    d = discretize(train[:, None], 32)
    edges = d.edges[0]
    out = apply_edges(np.array([-1e6, 1e6, 0.0, 3199.0]), edges, 32)
    assert out.tolist() == [0, 31, 0, 31]


def test_collapsed_edges_clamp_to_top_bin():
    """Values above the last of a few collapsed edges still go to the top bin."""
    train = np.concatenate([np.zeros(3000), np.arange(1.0, 201.0)])
    d = discretize(train[:, None], 32)
    edges = d.edges[0]
    assert len(edges) < 31
    out = apply_edges(np.array([-5.0, 0.0, 1e6]), edges, 32)
    assert out.tolist() == [0, 0, 31]
    assert d.bins[:, 0].max() == 31


def test_mutual_information_identities():
    """Independence gives 0, I(x;x) = H(x) and MI is symmetric."""
    x = np.repeat([0, 1, 2, 3], 50)
    y = np.tile([0, 1], 100)
    assert mutual_information(x, y) == pytest.approx(0.0, abs=1e-12)
    assert mutual_information(x, x) == pytest.approx(entropy(x))
    assert entropy(x) == pytest.approx(np.log(4))

    rng = np.random.default_rng(1)
    a = rng.integers(0, 5, 300)
    b = (a + rng.integers(0, 2, 300)) % 5
    assert mutual_information(a, b) == pytest.approx(mutual_information(b, a))
    assert mutual_information(a, b) >= 0.0


def test_joint_row_permutation_invariance():
    """Shuffling rows of features and labels together changes neither MI nor the picks."""
    rng = np.random.default_rng(6)
    bins = rng.integers(0, 4, (300, 6))
    y = ((bins[:, 0] + bins[:, 4] + rng.integers(0, 2, 300)) > 3).astype(int)
    perm = rng.permutation(300)
    for j in range(6):
        assert mutual_information(bins[perm, j], y[perm]) == pytest.approx(mutual_information(bins[:, j], y))
    a = greedy_select(DiscretizedMatrix(bins, [], 4), y, 3)
    b = greedy_select(DiscretizedMatrix(bins[perm], [], 4), y[perm], 3)
    assert a["indices"] == b["indices"]


def test_duplicate_column_not_reselected():
    """An exact copy of the first pick is passed over for an independent relevant feature."""
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 400)
    x0 = 2 * y + rng.integers(0, 2, 400)
    flips = rng.random(400) < 0.3
    x2 = np.where(flips, 1 - y, y)
    bins = np.column_stack([x0, x0, x2])
    result = greedy_select(DiscretizedMatrix(bins, [], 4), y, 2)
    assert result["indices"] == [0, 2]
    assert result["scores"][0] == pytest.approx(np.log(2), abs=0.01)


def test_k_equals_one_is_argmax_relevance():
    """The first pick is the most relevant feature."""
    rng = np.random.default_rng(3)
    bins = rng.integers(0, 4, (200, 6))
    y = (bins[:, 4] > 1).astype(int)
    result = greedy_select(DiscretizedMatrix(bins, [], 4), y, 1)
    assert result["indices"] == [int(np.argmax(result["relevance"]))] == [4]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_greedy_matches_reference(k):
    """The vectorized search agrees with a direct per-candidate evaluation."""
    rng = np.random.default_rng(10 + k)
    bins = rng.integers(0, 4, (200, 6))
    y = ((bins[:, 1] + bins[:, 3] + rng.integers(0, 2, 200)) > 3).astype(int)
    result = greedy_select(DiscretizedMatrix(bins, [], 4), y, k)
    assert result["indices"] == _reference_greedy(bins, y, k)


def test_monotone_transform_invariance():
    """A strictly increasing transform of every column keeps the selection."""
    rng = np.random.default_rng(4)
    values = rng.standard_normal((500, 8))
    y = (values[:, 2] + 0.5 * values[:, 5] > 0).astype(int)
    names = [f"f{i}" for i in range(8)]
    a = select_features(values, y, names, k=4, n_bins=16)
    b = select_features(np.exp(values), y, names, k=4, n_bins=16)
    assert a.indices == b.indices
    assert a.indices[0] == 2


def test_k_too_large():
    """Asking for more than the non-degenerate features is a selection error."""
    values = np.column_stack([np.arange(64.0), np.ones(64), np.arange(64.0) ** 2])
    with pytest.raises(SelectionError):
        select_features(values, np.arange(64) % 2, ["a", "b", "c"], k=3, n_bins=8)


def test_selection_file_round_trip():
    """Saved selections reload with the same indices, names and edges."""
    rng = np.random.default_rng(5)
    values = rng.standard_normal((200, 5))
    y = (values[:, 0] > 0).astype(int)
    selection = select_features(values, y, list("abcde"), k=2, n_bins=8, task="activity", catalog_hash="abc")
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "activity_selection.json"
        save_selection(selection, path)
        loaded = load_selection(path)
    assert loaded.indices == selection.indices
    assert loaded.names == selection.names
    assert loaded.edges == selection.edges
    assert loaded.task == "activity"
    assert loaded.catalog_hash == "abc"
    assert np.array_equal(loaded.columns(values), values[:, selection.indices])
