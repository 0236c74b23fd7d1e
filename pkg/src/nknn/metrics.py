"""Evaluation: tokenized BLEU-4, repetition ratio, top-k retrieval accuracy,
and contrastive word-sense scoring."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Sequence

from .ann import VectorIndex, search
from .datastore import Datastore, KeySource, ngram_queries, sequence_states
from .decode_at import check_store
from .decode_nat import repetition_aware_check

log = logging.getLogger(__name__)

MAX_ORDER = 4


def _ngrams(tokens: Sequence[Hashable], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def clipped_counts(hyp: Sequence[Hashable], ref: Sequence[Hashable], order: int) -> tuple[int, int]:
    """(matches clipped by reference counts, hypothesis n-gram total)."""
    h, r = _ngrams(hyp, order), _ngrams(ref, order)
    return sum(min(c, r[g]) for g, c in h.items()), sum(h.values())


def modified_precision(hyp: Sequence[Hashable], ref: Sequence[Hashable], order: int) -> Fraction:
    match, total = clipped_counts(hyp, ref, order)
    return Fraction(match, total) if total else Fraction(0)


def corpus_bleu(hypotheses: Sequence[Sequence[Hashable]], references: Sequence[Sequence[Hashable]]) -> float:
    """Corpus BLEU-4 on pre-tokenized input, scaled to [0, 100].

    Orders n >= 2 with zero matches use add-one smoothing, (0 + 1) / (total + 1).
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        if len(ref) == 0:
            raise ValueError("empty reference")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for order in range(1, MAX_ORDER + 1):
            m, c = clipped_counts(hyp, ref, order)
            matches[order - 1] += m
            totals[order - 1] += c
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for order in range(1, MAX_ORDER + 1):
        m, c = matches[order - 1], totals[order - 1]
        if order >= 2 and m == 0:
            m, c = 1, c + 1
        log_p += math.log(m / c) / MAX_ORDER
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def sentence_bleu(hypothesis: Sequence[Hashable], reference: Sequence[Hashable]) -> float:
    return corpus_bleu([hypothesis], [reference])


def repetition_ratio(outputs: Iterable[Sequence[int]]) -> float:
    reps = tokens = 0
    for out in outputs:
        reps += repetition_aware_check(out)
        tokens += len(out)
    return reps / tokens if tokens else 0.0


def topk_accuracy(
    store: Datastore,
    index: VectorIndex | None,
    eval_pairs: Sequence,
    model,
    n: int,
    k: int,
) -> float:
    """Fraction of gold positions whose token appears in slot 0 of the k retrieved grams."""
    check_store(store, model.fingerprint, store.key_source, n)
    if len(store) == 0:
        log.warning("top-k accuracy on an empty datastore is 0")
        return 0.0
    hits = queries = 0
    for pair in eval_pairs:
        states, tokens = sequence_states(model, pair, store.key_source, store.append_eos, store.candidate_input)
        for t, query in zip(range(n, len(tokens) + 1), ngram_queries(states, n, store.config.pooling)):
            neighbors = search(store, index, query, k)
            hits += int(tokens[t - 1] in set(neighbors.values[:, -1].tolist()))
            queries += 1
    return hits / queries if queries else 0.0


@dataclass
class SentenceRow:
    index: int
    bleu: float
    repetitions: int
    length: int


@dataclass
class EvalReport:
    corpus_bleu: float
    repetition_ratio: float
    topk_accuracy: float | None = None
    rows: list[SentenceRow] = field(default_factory=list)
    bleu_variant: str = "tokenized BLEU-4, add-one smoothing for n>=2"

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    hypotheses: Sequence[Sequence[Hashable]],
    references: Sequence[Sequence[Hashable]],
    topk: float | None = None,
) -> EvalReport:
    rows = [
        SentenceRow(i, sentence_bleu(h, r), repetition_aware_check(h), len(h))
        for i, (h, r) in enumerate(zip(hypotheses, references))
    ]
    return EvalReport(
        corpus_bleu=corpus_bleu(hypotheses, references),
        repetition_ratio=repetition_ratio(hypotheses),
        topk_accuracy=topk,
        rows=rows,
    )


@dataclass(frozen=True)
class WSDItem:
    source: tuple
    reference: tuple
    contrastive: tuple[tuple, ...]

    def swapped(self) -> "WSDItem":
        """Promote the first contrastive reference to gold and demote the gold."""
        first, rest = self.contrastive[0], self.contrastive[1:]
        return WSDItem(self.source, first, (self.reference,) + rest)


def wsd_contrastive(decode: Callable[[Sequence], Sequence], items: Sequence[WSDItem]) -> float:
    """Share of items whose decoded output scores strictly higher BLEU against
    the gold reference than against every contrastive one."""
    for i, item in enumerate(items):
        if not item.contrastive:
            raise ValueError(f"item {i} has no contrastive references")
    if not items:
        return 0.0
    correct = 0
    for item in items:
        out = list(decode(item.source))
        gold = sentence_bleu(out, item.reference)
        if all(gold > sentence_bleu(out, c) for c in item.contrastive):
            correct += 1
    return correct / len(items)
