"""Neighbor sets to distributions, interpolation and positionwise aggregation.

Distributions are dense float64 vectors. The all-zero vector is the
"no-evidence" distribution: interpolating with it leaves the model
distribution untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ann import NeighborSet


@dataclass(frozen=True)
class RetrievalParams:
    k: int = 8
    tau: float = 10.0
    lam: float = 0.5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


def no_evidence(vocab_size: int) -> np.ndarray:
    return np.zeros(vocab_size, dtype=np.float64)


def is_no_evidence(dist: np.ndarray) -> bool:
    return not np.any(dist)


def knn_distribution(neighbors: NeighborSet, offset: int, tau: float, vocab_size: int) -> np.ndarray:
    """kNN distribution over the token ``offset`` slots before each gram's last.

    Every token in one retrieved n-gram shares the weight exp(-d / tau).
    Weights are shifted by the smallest distance before exponentiating; the
    shift cancels in the normalization.
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if offset < 0:
        raise ValueError(f"offset must be >= 0, got {offset}")
    dist = no_evidence(vocab_size)
    if len(neighbors) == 0:
        return dist
    values = neighbors.values
    if values.shape[1] < offset + 1:
        raise ValueError(f"value tuples of length {values.shape[1]} have no slot at offset {offset}")
    d = neighbors.distances
    weights = np.exp(-(d - d.min()) / tau)
    np.add.at(dist, values[:, -1 - offset], weights)
    return dist / dist.sum()


def interpolate(model_dist: np.ndarray, knn_dist: np.ndarray, lam: float) -> np.ndarray:
    """(1 - lam) * model + lam * knn, or the model alone when knn has no evidence."""
    model_dist = np.asarray(model_dist, dtype=np.float64)
    knn_dist = np.asarray(knn_dist, dtype=np.float64)
    if model_dist.shape != knn_dist.shape:
        raise ValueError(f"length mismatch: {model_dist.shape} vs {knn_dist.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if is_no_evidence(knn_dist):
        total = model_dist.sum()
        if total > 0 and abs(total - 1.0) > 1e-12:
            return model_dist / total
        return model_dist.copy()
    return (1.0 - lam) * model_dist + lam * knn_dist


def aggregate_positionwise(dists: Sequence[np.ndarray], vocab_size: int | None = None) -> np.ndarray:
    """Normalized sum of the kNN distributions covering one position."""
    if len(dists) == 0:
        if vocab_size is None:
            raise ValueError("vocab_size is required to build an empty aggregate")
        return no_evidence(vocab_size)
    stacked = np.stack([np.asarray(d, dtype=np.float64) for d in dists])
    # sorting each column first makes the float sum independent of input order
    total = np.sort(stacked, axis=0).sum(axis=0)
    mass = total.sum()
    if mass == 0:
        return total
    return total / mass
