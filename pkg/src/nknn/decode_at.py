"""Autoregressive beam search augmented with n-gram retrieval.

At step t >= n each live hypothesis queries the datastore once with the
pooled states of its last n positions. Slot 0 of the retrieved values
feeds the usual interpolation for the token being predicted; slots 1..n-1
re-weight the cached probabilities of tokens the hypothesis already
emitted, and pruning then runs on the re-weighted scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .ann import VectorIndex, search
from .core import EOS
from .datastore import Datastore, DatastoreError, KeySource, pool_ngram
from .knnmath import RetrievalParams, interpolate, knn_distribution


class FingerprintMismatch(DatastoreError):
    def __init__(self, store_fp: str, model_fp: str):
        super().__init__(f"datastore fingerprint {store_fp} does not match model fingerprint {model_fp}")
        self.store_fp = store_fp
        self.model_fp = model_fp


def log_score(step_probs: Sequence[float]) -> float:
    total = 0.0
    for p in step_probs:
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...] = ()
    step_probs: tuple[float, ...] = ()
    hidden_history: tuple[np.ndarray, ...] = field(default=(), compare=False)
    score: float = 0.0

    def extend(self, token: int, prob: float, history: tuple[np.ndarray, ...]) -> "BeamHypothesis":
        probs = self.step_probs + (float(prob),)
        return BeamHypothesis(self.tokens + (int(token),), probs, history, log_score(probs))

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    max_len: int = 64
    params: RetrievalParams = field(default_factory=RetrievalParams)
    n: int = 2
    update_beam: bool = True
    length_penalty: float = 1.0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError(f"beam size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


def update_beam_weight(hyp: BeamHypothesis, offset: int, knn_prob: float, lam: float) -> BeamHypothesis:
    """Blend the cached weight of the token ``offset`` steps back with its kNN probability."""
    if not 1 <= offset <= len(hyp.tokens):
        raise ValueError(f"offset {offset} outside the history of {len(hyp.tokens)} tokens")
    pos = len(hyp.tokens) - offset
    probs = list(hyp.step_probs)
    probs[pos] = (1.0 - lam) * probs[pos] + lam * knn_prob
    return replace(hyp, step_probs=tuple(probs), score=log_score(probs))


def check_store(store: Datastore, fingerprint: str, key_source: KeySource, n: int) -> None:
    if store.model_fingerprint != fingerprint:
        raise FingerprintMismatch(store.model_fingerprint, fingerprint)
    if store.key_source != key_source:
        raise DatastoreError(f"datastore keys come from {store.key_source.name}, decoder needs {key_source.name}")
    if store.n != n:
        raise DatastoreError(f"datastore was built with n={store.n}, decoder configured with n={n}")


def _top_tokens(dist: np.ndarray, limit: int) -> list[int]:
    order = np.argsort(-dist, kind="stable")[:limit]
    return [int(t) for t in order if dist[t] > 0.0]


def _prune(candidates: list[BeamHypothesis], beam_size: int) -> list[BeamHypothesis]:
    candidates.sort(key=lambda h: (-h.score, h.tokens))
    return candidates[:beam_size]


def _final_choice(finished: list[BeamHypothesis], length_penalty: float) -> tuple[int, ...]:
    def norm(h: BeamHypothesis) -> float:
        return h.score / (len(h.tokens) ** length_penalty)

    best = min(finished, key=lambda h: (-norm(h), h.tokens))
    return best.tokens[:-1] if best.finished else best.tokens


def beam_search(source: Sequence[int], model, config: BeamConfig) -> list[int]:
    """Plain beam search over the model distribution (no retrieval)."""
    if len(source) == 0:
        raise ValueError("empty source")
    live, finished = [BeamHypothesis()], []
    for _ in range(config.max_len):
        candidates = []
        for hyp in live:
            _, dist = model.step(source, hyp.tokens)
            for tok in _top_tokens(dist, config.beam_size):
                candidates.append(hyp.extend(tok, dist[tok], ()))
        live = []
        for hyp in _prune(candidates, config.beam_size):
            (finished if hyp.finished else live).append(hyp)
        if not live:
            break
    finished.extend(live)
    return list(_final_choice(finished, config.length_penalty))


def decode_at(
    source: Sequence[int],
    model,
    store: Datastore,
    index: VectorIndex | None,
    config: BeamConfig,
) -> list[int]:
    if len(source) == 0:
        raise ValueError("empty source")
    check_store(store, model.fingerprint, KeySource.AT, config.n)
    n, params, V = config.n, config.params, model.vocab_size
    live, finished = [BeamHypothesis()], []
    for _ in range(config.max_len):
        candidates = []
        for hyp in live:
            hidden, dist = model.step(source, hyp.tokens)
            history = hyp.hidden_history + (hidden,)
            if len(history) >= n and len(store):
                query = pool_ngram(history[-n:], n, store.config.pooling)
                neighbors = search(store, index, query, params.k)
                if config.update_beam:
                    for i in range(1, min(n - 1, len(hyp.tokens)) + 1):
                        p = knn_distribution(neighbors, i, params.tau, V)[hyp.tokens[-i]]
                        hyp = update_beam_weight(hyp, i, p, params.lam)
                dist = interpolate(dist, knn_distribution(neighbors, 0, params.tau, V), params.lam)
            keep = history[max(0, len(history) - (n - 1)) :] if n > 1 else ()
            for tok in _top_tokens(dist, config.beam_size):
                candidates.append(hyp.extend(tok, dist[tok], keep))
        live = []
        for hyp in _prune(candidates, config.beam_size):
            (finished if hyp.finished else live).append(hyp)
        if not live:
            break
    finished.extend(live)
    return list(_final_choice(finished, config.length_penalty))
