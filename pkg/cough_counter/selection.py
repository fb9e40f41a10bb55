#!/usr/bin/env python3
"""
Feature selection

Equal-frequency discretization, plug-in mutual information and the greedy
relevance-minus-redundancy selection of the features fed to each network.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from cough_counter.errors import SelectionError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_N_BINS = 32
DEFAULT_N_SELECTED = 50


@dataclass
class DiscretizedMatrix:
    bins: np.ndarray
    edges: List[np.ndarray]
    n_bins: int = DEFAULT_N_BINS
    degenerate: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.array([np.all(col == col[0]) for col in self.bins.T], dtype=bool)

    @property
    def n_features(self) -> int:
        return self.bins.shape[1]


@dataclass
class SelectedFeatureSet:
    indices: List[int]
    names: List[str]
    scores: List[float]
    relevance: List[float]
    edges: List[List[float]]
    n_bins: int = DEFAULT_N_BINS
    task: str = ""
    catalog_hash: str = ""

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError("Selected feature indices must be unique")
        if not (len(self.names) == len(self.scores) == len(self.relevance) == len(self.indices)):
            raise ValidationError("Selection fields must all have one entry per selected feature")

    def __len__(self) -> int:
        return len(self.indices)

    def columns(self, values: np.ndarray) -> np.ndarray:
        """The selected columns of a (frames x features) array, in selection order."""
        return np.asarray(values)[:, self.indices]

    def to_dict(self) -> Dict:
        return {
            "task": self.task,
            "catalog_hash": self.catalog_hash,
            "n_bins": self.n_bins,
            "indices": self.indices,
            "names": self.names,
            "scores": self.scores,
            "relevance": self.relevance,
            "edges": self.edges,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SelectedFeatureSet":
        try:
            return cls(
                indices=data["indices"],
                names=data["names"],
                scores=[float(s) for s in data["scores"]],
                relevance=[float(r) for r in data["relevance"]],
                edges=[[float(e) for e in edges] for edges in data.get("edges", [])],
                n_bins=int(data.get("n_bins", DEFAULT_N_BINS)),
                task=data.get("task", ""),
                catalog_hash=data.get("catalog_hash", ""),
            )
        except KeyError as e:
            raise ValidationError(f"Selection is missing field {e}") from e


def bin_edges(column: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Interior edges of an equal-frequency binning; duplicate quantiles collapse."""
    quantiles = np.quantile(column, np.arange(1, n_bins) / n_bins, method="inverted_cdf")
    return np.unique(quantiles)


def apply_edges(column: np.ndarray, edges: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """
    Bin index per value: values at or below the first edge go to bin 0,
    values above the last edge to bin n_bins - 1 even when collapsed
    quantiles left fewer edges.
    """
    column = np.asarray(column, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    index = np.clip(np.searchsorted(edges, column, side="left"), 0, n_bins - 1)
    if edges.size:
        index = np.where(column > edges[-1], n_bins - 1, index)
    return index


def discretize(values: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> DiscretizedMatrix:
    """
    Equal-frequency discretization of every column.

    Args:
        values: (frames x features) training data
        n_bins: Number of bins B

    Raises:
        ValidationError: If there are fewer frames than bins
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValidationError("Expected a (frames x features) array")
    if values.shape[0] < n_bins:
        raise ValidationError(f"Need at least {n_bins} frames to discretize, got {values.shape[0]}")
    edges = [bin_edges(col, n_bins) for col in values.T]
    bins = np.column_stack([apply_edges(col, e, n_bins) for col, e in zip(values.T, edges)])
    return DiscretizedMatrix(bins.astype(np.int64), edges, n_bins)


def _mi_from_counts(joint: np.ndarray) -> np.ndarray:
    """Plug-in MI in nats of one or more contingency tables stacked on leading axes."""
    joint = np.asarray(joint, dtype=np.float64)
    n = joint.sum(axis=(-2, -1), keepdims=True)
    cx = joint.sum(axis=-1, keepdims=True)
    cy = joint.sum(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint / n * np.log(n * joint / (cx * cy)), 0.0)
    return np.maximum(terms.sum(axis=(-2, -1)), 0.0)


def _contingency(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    nx, ny = xi.max() + 1, yi.max() + 1
    return np.bincount(xi * ny + yi, minlength=nx * ny).reshape(nx, ny)


def mutual_information(x: Sequence, y: Sequence) -> float:
    """Plug-in mutual information (nats) between two discrete columns."""
    x = np.asarray(x).ravel()
    y = np.asarray(y).ravel()
    if x.size == 0 or x.shape != y.shape:
        raise ValidationError("Mutual information needs two non-empty columns of equal length")
    return float(_mi_from_counts(_contingency(x, y)))


def entropy(x: Sequence) -> float:
    """Plug-in entropy (nats) of a discrete column."""
    _, counts = np.unique(np.asarray(x).ravel(), return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def _mi_against(bins: np.ndarray, column: int, n_bins: int) -> np.ndarray:
    """MI between one binned column and every column of the matrix."""
    n_frames, n_features = bins.shape
    codes = bins * n_bins + bins[:, column : column + 1]
    codes = codes + np.arange(n_features) * n_bins * n_bins
    counts = np.bincount(codes.ravel(), minlength=n_features * n_bins * n_bins)
    return _mi_from_counts(counts.reshape(n_features, n_bins, n_bins))


def greedy_select(d: DiscretizedMatrix, labels: Sequence, k: int = DEFAULT_N_SELECTED) -> Dict[str, List]:
    """
    Greedy selection: first the feature of maximal I(X;C), then at each step
    the feature maximizing I(X;C) minus its mean MI with the selected ones.

    Ties go to the lowest feature index; degenerate features are never chosen.

    Returns:
        Dict with ordered "indices", per-step "scores" and per-feature "relevance"

    Raises:
        SelectionError: If k exceeds the number of non-degenerate features
    """
    labels = np.asarray(labels)
    if labels.shape[0] != d.bins.shape[0]:
        raise ValidationError("Labels must have one entry per frame")
    available = int(np.sum(~d.degenerate))
    if k < 1 or k > available:
        raise SelectionError(f"Cannot select {k} features: {available} non-degenerate features available")

    relevance = np.array([mutual_information(col, labels) for col in d.bins.T])
    redundancy = np.zeros(d.n_features)
    candidate = ~d.degenerate
    indices: List[int] = []
    scores: List[float] = []

    for step in range(k):
        if indices:
            score = relevance - redundancy / len(indices)
        else:
            score = relevance.copy()
        score[~candidate] = -np.inf
        best = int(np.argmax(score))
        indices.append(best)
        scores.append(float(score[best]))
        candidate[best] = False
        redundancy += _mi_against(d.bins, best, d.n_bins)
        logger.debug("Selection step %d: feature %d (score %.4f)", step + 1, best, score[best])

    return {"indices": indices, "scores": scores, "relevance": relevance.tolist()}


def select_features(
    values: np.ndarray,
    labels: Sequence,
    names: Sequence[str],
    k: int = DEFAULT_N_SELECTED,
    n_bins: int = DEFAULT_N_BINS,
    task: str = "",
    catalog_hash: str = "",
) -> SelectedFeatureSet:
    """Discretize training data and greedily select k features."""
    d = discretize(values, n_bins)
    result = greedy_select(d, labels, k)
    indices = result["indices"]
    logger.info("Selected %d features for task '%s'", len(indices), task)
    return SelectedFeatureSet(
        indices=indices,
        names=[names[i] for i in indices],
        scores=result["scores"],
        relevance=[result["relevance"][i] for i in indices],
        edges=[d.edges[i].tolist() for i in indices],
        n_bins=n_bins,
        task=str(getattr(task, "value", task)),
        catalog_hash=catalog_hash,
    )


def save_selection(selection: SelectedFeatureSet, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(selection.to_dict(), f, indent=2)
        f.write("\n")


def load_selection(path: Union[str, Path]) -> SelectedFeatureSet:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Invalid selection file {path}: {e}") from e
    return SelectedFeatureSet.from_dict(data)
