import json
import math
from fractions import Fraction

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pungan import evalmetrics as E
from pungan import generator as G
from pungan.corpus import TaggedSentence
from pungan.errors import InvalidArgument, UndefinedMetric

from conftest import LEMMA, PAIR, toy_discriminator, toy_generator


def _pct(num, den):
    return float(Fraction(100 * num, den))


# ---------------------------------------------------------------------------
# distinct-n


def test_hand_counted_examples():
    assert E.distinct_n(["a b a"], 1) == _pct(2, 3)
    assert E.distinct_n(["a b", "a b"], 2) == 50.0
    assert E.distinct_n(["a b c", "d e"], 1) == 100.0
    assert E.distinct_n(["a b c", "d e"], 2) == 100.0
    # bigrams: (x y) (y x) (x y) | (y) contributes none
    assert E.distinct_n(["x y x y", "y"], 2) == _pct(2, 3)


def test_short_sentences_contribute_nothing():
    assert E.distinct_n(["a", "b c"], 2) == 100.0
    with pytest.raises(UndefinedMetric):
        E.distinct_n(["a", "b"], 2)
    with pytest.raises(InvalidArgument):
        E.distinct_n([], 1)


def test_accepts_tagged_sentences_and_traces():
    s = TaggedSentence.make(["a", LEMMA, "a"], 1, LEMMA, "river")
    assert E.distinct_n([s], 1) == _pct(2, 3)  # the sense tag is not counted
    t = G.GenerationTrace(("a", LEMMA, "a"), 1, PAIR, (), 5)
    assert E.distinct_n([t], 1) == _pct(2, 3)


sentences = st.lists(st.lists(st.sampled_from("abcdef"), min_size=2, max_size=6).map(" ".join),
                     min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(sentences, st.randoms(use_true_random=False), st.sampled_from([1, 2]))
def test_permutation_invariant(corpus, rnd, n):
    shuffled = corpus[:]
    rnd.shuffle(shuffled)
    assert E.distinct_n(shuffled, n) == E.distinct_n(corpus, n)


@settings(max_examples=200, deadline=None)
@given(sentences, st.sampled_from([1, 2]))
def test_doubling_a_corpus(corpus, n):
    grams = [tuple(s.split()[i:i + n]) for s in corpus for i in range(len(s.split()) - n + 1)]
    doubled = E.distinct_n(corpus + corpus, n)
    assert doubled == _pct(len(set(grams)), 2 * len(grams))
    if len(set(grams)) == len(grams):
        assert doubled == 50.0


# ---------------------------------------------------------------------------
# unusualness


def _corpus(words_list, sense="river"):
    return [TaggedSentence.make(w, w.index(LEMMA), LEMMA, sense) for w in words_list]


def test_self_unusualness_is_exactly_zero():
    gen = toy_generator(seed=1)
    x = _corpus([["a", LEMMA], [LEMMA, "b", "c"], ["d", "d", LEMMA]])
    assert E.unusualness(gen, x, x) == 0.0


def test_unigram_lm_closed_form():
    gen = toy_generator(seed=2)
    # zero recurrent weights: every hidden state is 0, so the LM is the unigram softmax(out_b)
    for name in ("fwd.wx", "fwd.wh", "fwd.b"):
        gen.arrays[name][:] = 0.0
    logits = np.random.default_rng(0).normal(size=len(gen.vocab))
    gen.arrays["fwd.out_b"][0] = logits
    logq = logits - math.log(np.exp(logits).sum())
    v = gen.vocab

    def per_token(sents):
        total = count = 0
        for s in sents:
            toks = list(s.tokens) + ["<eos>"]
            total += sum(logq[v.id(t)] for t in toks)
            count += len(toks)
        return total / count

    generated = _corpus([["a", LEMMA], ["b", LEMMA, "b", "b"]])
    training = _corpus([[LEMMA, "c", "d"], ["a", "a", LEMMA]])
    expected = per_token(generated) - per_token(training)
    assert E.unusualness(gen, generated, training) == pytest.approx(expected, abs=1e-12)


def test_unusualness_sign():
    gen = toy_generator(seed=2)
    for name in ("fwd.wx", "fwd.wh", "fwd.b"):
        gen.arrays[name][:] = 0.0
    gen.arrays["fwd.out_b"][:] = 0.0
    gen.arrays["fwd.out_b"][0, gen.vocab.id("a")] = 3.0  # "a" is likely, everything else equally unlikely
    common = _corpus([["a", "a", LEMMA, "a"]])
    rare = _corpus([["b", "c", LEMMA, "d"]])
    assert E.unusualness(gen, rare, common) < 0 < E.unusualness(gen, common, rare)


def test_unusualness_needs_both_sets():
    gen = toy_generator()
    with pytest.raises(InvalidArgument):
        E.unusualness(gen, [], _corpus([["a", LEMMA]]))


# ---------------------------------------------------------------------------
# reports


def test_report_invariants_and_schema():
    gen = toy_generator(seed=3)
    disc = toy_discriminator(gen.vocab)
    train = _corpus([["a", LEMMA, "b"], [LEMMA, "c"]])
    report = E.evaluate_run(gen, disc, [PAIR], train, 30, seed=1, max_len=6)
    jsonschema.validate(json.loads(report.to_json()), E.REPORT_SCHEMA)
    assert 0 <= report.dist1 <= 100 and 0 <= report.dist2 <= 100 and report.sentence_count == 30
    assert 0 <= report.mean_reward <= 1
    assert "Dist-1" in report.table()


def test_evaluate_is_deterministic():
    gen = toy_generator(seed=3)
    train = _corpus([["a", LEMMA, "b"]])
    a = E.evaluate_run(gen, None, [PAIR], train, 20, seed=5, max_len=6)
    b = E.evaluate_run(gen, None, [PAIR], train, 20, seed=5, max_len=6)
    assert a.to_json() == b.to_json()
    assert a.mean_reward is None


def test_report_rejects_out_of_range_values():
    with pytest.raises(InvalidArgument):
        E.MetricReport(0.0, 101.0, 50.0, 3)
    with pytest.raises(InvalidArgument):
        E.MetricReport(0.0, 10.0, 50.0, 0)


def test_more_samples_do_not_raise_dist1():
    gen = toy_generator(seed=4, scale=1.5)
    train = _corpus([["a", LEMMA, "b"]])
    small = [E.evaluate_run(gen, None, [PAIR], train, 50, seed=s, max_len=6).dist1 for s in range(20)]
    large = [E.evaluate_run(gen, None, [PAIR], train, 100, seed=s, max_len=6).dist1 for s in range(20)]
    assert np.mean(large) <= np.mean(small)
