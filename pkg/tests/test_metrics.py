import logging
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nknn.ann import exact_search
from nknn.datastore import KeySource, NGramConfig, build_datastore, ngram_queries, sequence_states
from nknn.metrics import (
    WSDItem,
    clipped_counts,
    corpus_bleu,
    evaluate,
    modified_precision,
    repetition_ratio,
    sentence_bleu,
    topk_accuracy,
    wsd_contrastive,
)

from reference import textbook_bleu

a, b, c, d = "a", "b", "c", "d"


class TestBLEU:
    def test_perfect_match(self):
        assert corpus_bleu([[a, b, c, d, a]], [[a, b, c, d, a]]) == 100.0

    def test_clipped_unigram_precision(self):
        assert clipped_counts([a, a, a], [a, b, c], 1) == (1, 3)
        assert abs(float(modified_precision([a, a, a], [a, b, c], 1)) - 1 / 3) <= 1e-6

    def test_hand_computed_score(self):
        # p1 = 1/3, p2..p4 smoothed to 1/3, 1/2, 1/1; no brevity penalty
        expected = 100.0 * math.exp((math.log(1 / 3) + math.log(1 / 3) + math.log(1 / 2) + math.log(1.0)) / 4)
        assert abs(corpus_bleu([[a, a, a]], [[a, b, c]]) - expected) <= 1e-6

    def test_empty_hypothesis(self):
        assert corpus_bleu([[]], [[a, b]]) == 0.0

    def test_no_unigram_match(self):
        assert corpus_bleu([[d, d]], [[a, b]]) == 0.0

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            corpus_bleu([[a]], [[]])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            corpus_bleu([[a]], [[a], [b]])

    def test_brevity_penalty(self):
        score = corpus_bleu([[a, b, c, d]], [[a, b, c, d, a, b, c, d]])
        assert abs(score - 100.0 * math.exp(1 - 2)) <= 1e-9

    def test_permutation_invariance(self):
        rng = random.Random(5)
        words = list("abcdefg")
        hyps = [[rng.choice(words) for _ in range(rng.randint(1, 9))] for _ in range(30)]
        refs = [[rng.choice(words) for _ in range(rng.randint(1, 9))] for _ in range(30)]
        base = corpus_bleu(hyps, refs)
        for _ in range(50):
            order = list(range(30))
            rng.shuffle(order)
            assert corpus_bleu([hyps[i] for i in order], [refs[i] for i in order]) == pytest.approx(base, abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.lists(st.sampled_from("abcd"), max_size=8),
                st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_matches_textbook(self, pairs):
        hyps = [h for h, _ in pairs]
        refs = [r for _, r in pairs]
        score = corpus_bleu(hyps, refs)
        assert 0.0 <= score <= 100.0 + 1e-9
        assert score == pytest.approx(textbook_bleu(hyps, refs), abs=1e-9)

    def test_sentence_bleu_is_single_corpus(self):
        assert sentence_bleu([a, b], [a, b, c]) == corpus_bleu([[a, b]], [[a, b, c]])


class TestRepetition:
    def test_examples(self):
        assert repetition_ratio([[4, 4, 5]]) == pytest.approx(1 / 3)
        assert repetition_ratio([[4, 5, 6], [7]]) == 0.0
        assert repetition_ratio([[4, 4], [5, 5]]) == 0.5

    def test_empty(self):
        assert repetition_ratio([]) == 0.0
        assert repetition_ratio([[]]) == 0.0


class TestTopK:
    def test_subset_of_store_is_perfect(self, small_world, nat_model):
        store = build_datastore(small_world.train, nat_model, NGramConfig(2))
        assert topk_accuracy(store, None, small_world.train[:40], nat_model, 2, 5) == 1.0

    def test_empty_store_warns(self, small_world, nat_model, caplog):
        empty = build_datastore([small_world.train[0]], nat_model, NGramConfig(40))
        with caplog.at_level(logging.WARNING):
            assert topk_accuracy(empty, None, small_world.eval, nat_model, 40, 5) == 0.0
        assert "empty" in caplog.text

    def test_k_equal_store_size(self, small_world, nat_model):
        corpus = small_world.train[:4]
        store = build_datastore(corpus, nat_model, NGramConfig(2))
        slot0 = set(store.values[:, -1].tolist())
        eval_pairs = small_world.eval[:10]
        hits = total = 0
        for p in eval_pairs:
            hits += sum(tok in slot0 for tok in p.target[1:])
            total += len(p.target) - 1
        assert topk_accuracy(store, None, eval_pairs, nat_model, 2, len(store)) == pytest.approx(hits / total)

    def test_matches_exhaustive_count(self, small_world, nat_model):
        store = build_datastore(small_world.train[:50], nat_model, NGramConfig(2))
        pairs = small_world.eval[:10]
        hits = total = 0
        for p in pairs:
            states, tokens = sequence_states(nat_model, p, KeySource.NAT_SECOND)
            for t, q in zip(range(2, len(tokens) + 1), ngram_queries(states, 2)):
                nb = exact_search(store, q, 3)
                hits += tokens[t - 1] in nb.values[:, -1].tolist()
                total += 1
        assert topk_accuracy(store, None, pairs, nat_model, 2, 3) == hits / total


class TestWSD:
    item = WSDItem(source=(4, 5), reference=(a, b, c), contrastive=((a, d, c),))

    def test_gold_output_correct(self):
        assert wsd_contrastive(lambda s: [a, b, c], [self.item]) == 1.0

    def test_contrastive_output_incorrect(self):
        assert wsd_contrastive(lambda s: [a, d, c], [self.item]) == 0.0

    def test_tie_incorrect(self):
        assert wsd_contrastive(lambda s: [a, c, c], [self.item]) == 0.0

    def test_empty_contrastive_rejected(self):
        with pytest.raises(ValueError):
            wsd_contrastive(lambda s: [a], [WSDItem((4,), (a,), ())])

    def test_swapped(self):
        swapped = self.item.swapped()
        assert swapped.reference == (a, d, c) and swapped.contrastive == ((a, b, c),)
        assert wsd_contrastive(lambda s: [a, b, c], [swapped]) == 0.0

    def test_empty_items(self):
        assert wsd_contrastive(lambda s: [], []) == 0.0


def test_evaluate_report():
    report = evaluate([[a, a, b], [c]], [[a, a, b], [c]], topk=0.5)
    assert report.corpus_bleu == 100.0
    assert report.repetition_ratio == 0.25
    assert report.topk_accuracy == 0.5
    assert [r.repetitions for r in report.rows] == [1, 0]
    assert report.to_dict()["rows"][1]["length"] == 1
