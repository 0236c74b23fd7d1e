"""Two-pass non-autoregressive decoding with positionwise n-gram aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ann import VectorIndex, search
from .core import EOS, PAD
from .datastore import Datastore, KeySource, pool_ngram
from .decode_at import check_store
from .knnmath import RetrievalParams, aggregate_positionwise, interpolate, knn_distribution


@dataclass(frozen=True)
class NATDecodeConfig:
    params: RetrievalParams = field(default_factory=RetrievalParams)
    n: int = 2
    two_pass: bool = True
    aggregate: str = "normalized-sum"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.aggregate != "normalized-sum":
            raise ValueError(f"unsupported aggregate {self.aggregate!r}")


@dataclass(frozen=True)
class NATDecodeResult:
    tokens: list[int]
    candidate: list[int]
    coverage: list[int]  # number of n-gram distributions gathered per position


def coverage_counts(length: int, n: int) -> list[int]:
    """How many windows ending in [n, length] cover each position 1..length."""
    return [sum(1 for j in range(n) if n <= t + j <= length) for t in range(1, length + 1)]


def first_pass_candidate(source: Sequence[int], model) -> list[int]:
    length = model.predict_length(source)
    _, dists = model.first_pass(source, length)
    return [int(np.argmax(d)) for d in dists]


def plain_nat_decode(source: Sequence[int], model, two_pass: bool = False) -> list[int]:
    """Model-only argmax decoding, optionally after a second pass."""
    candidate = first_pass_candidate(source, model)
    if not two_pass:
        return candidate
    _, dists = model.second_pass(source, candidate)
    return [int(np.argmax(d)) for d in dists]


def decode_nat_detailed(
    source: Sequence[int],
    model,
    store: Datastore,
    index: VectorIndex | None,
    config: NATDecodeConfig,
) -> NATDecodeResult:
    key_source = KeySource.NAT_SECOND if config.two_pass else KeySource.NAT_FIRST
    check_store(store, model.fingerprint, key_source, config.n)
    length = model.predict_length(source)
    if length < 1:
        raise ValueError(f"predicted length must be >= 1, got {length}")
    hidden, dists = model.first_pass(source, length)
    candidate = [int(np.argmax(d)) for d in dists]
    if config.two_pass:
        hidden, dists = model.second_pass(source, candidate)

    n, params, V = config.n, config.params, model.vocab_size
    states = hidden.vectors
    gathered: list[list[np.ndarray]] = [[] for _ in range(length)]
    if len(store):
        for t in range(n, length + 1):
            query = pool_ngram(states[t - n : t], n, store.config.pooling)
            neighbors = search(store, index, query, params.k)
            for i in range(n):
                gathered[t - 1 - i].append(knn_distribution(neighbors, i, params.tau, V))
        coverage = [len(g) for g in gathered]
        if coverage != coverage_counts(length, n):
            raise AssertionError(f"coverage {coverage} disagrees with window arithmetic")
    else:
        coverage = [0] * length

    tokens = []
    for t in range(length):
        knn = aggregate_positionwise(gathered[t], V)
        tokens.append(int(np.argmax(interpolate(dists[t], knn, params.lam))))
    return NATDecodeResult(tokens=tokens, candidate=candidate, coverage=coverage)


def decode_nat(
    source: Sequence[int],
    model,
    store: Datastore,
    index: VectorIndex | None,
    config: NATDecodeConfig,
) -> list[int]:
    return decode_nat_detailed(source, model, store, index, config).tokens


def repetition_aware_check(output: Sequence[int]) -> int:
    """Count positions whose token repeats the previous one, ignoring PAD/EOS."""
    count = 0
    for prev, cur in zip(output, output[1:]):
        if cur == prev and cur not in (PAD, EOS):
            count += 1
    return count
