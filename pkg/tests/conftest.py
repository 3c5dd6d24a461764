"""Shared toy models and enumeration helpers for the test suite."""

from __future__ import annotations

import itertools
import sys

import numpy as np
import pytest

from pungan import generator as gen_mod
from pungan import discriminator as disc_mod
from pungan.corpus import SenseInventory, SensePair, TaggedSentence, Vocabulary, RESERVED

LEMMA = "bank"
SENSES = ("river", "finance")
PAIR = SensePair(LEMMA, *SENSES)


def toy_vocab(words=("a", "b", "c", "d"), inventory: SenseInventory | None = None) -> Vocabulary:
    inv = inventory or SenseInventory({LEMMA: SENSES})
    forced = []
    for lemma, senses in inv.senses.items():
        forced += [lemma] + [f"{lemma}#{s}" for s in senses]
    return Vocabulary(list(RESERVED) + forced + list(words), inv)


def toy_generator(seed=0, words=("a", "b", "c", "d"), emb=3, hidden=3, scale=0.8):
    vocab = toy_vocab(words)
    return gen_mod.init_generator(vocab, emb, hidden, np.random.default_rng(seed), scale)


def toy_discriminator(vocab: Vocabulary, seed=0, emb=3, hidden=3, scale=0.5):
    return disc_mod.init_discriminator(vocab, vocab.inventory, emb, hidden, np.random.default_rng(seed), scale)


def enumerate_sentences(words, max_len, lemma=LEMMA):
    """Every sentence the constrained decoder can emit: at most ``max_len // 2``
    words before the pun, at most ``max_len`` tokens in total."""
    out = []
    for a in range(max_len // 2 + 1):
        for b in range(max_len - a):
            for left in itertools.product(words, repeat=a):
                for right in itertools.product(words, repeat=b):
                    out.append(TaggedSentence.make(list(left) + [lemma] + list(right), a, lemma))
    return out


def trace_of(sentence: TaggedSentence, pair: SensePair, max_len: int) -> gen_mod.GenerationTrace:
    return gen_mod.GenerationTrace(tuple(sentence.surface_tokens()), sentence.target, pair, (), max_len)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def reference_logprob(params, sentence: TaggedSentence, pair: SensePair, max_len=None, collect=None):
    """Score one sentence by walking the decoder step by step.

    Independent of the batched scorer: no padding, no layout arrays, one
    ``lstm_step`` and one ``mixture_step`` per decision. ``collect`` (a list)
    receives every step distribution.
    """
    from pungan import numerics as nx
    from pungan.corpus import BOS_ID, EOS_ID

    vocab, arrays = params.vocab, params.arrays
    ids = vocab.encode(sentence.surface_tokens())
    p, n = sentence.target, len(ids)
    puns = [vocab.sense_id(pair.lemma, pair.s1), vocab.sense_id(pair.lemma, pair.s2)]
    emb = arrays["emb"]
    total = 0.0

    def step(direction, states, token_ids):
        cell = nx.LstmCellParams.from_arrays(arrays, direction)
        return [nx.lstm_step(cell, emb[[t]], s) for s, t in zip(states, token_ids)]

    def score(direction, states, target, forward):
        mask = vocab.generation_mask(pair.lemma, forward=forward)[None, :]
        dist = gen_mod.mixture_step(params, states[0][0], states[1][0], direction, mask)[0]
        if collect is not None:
            collect.append(dist)
        return float(np.log(dist[target]))

    hidden = arrays["fwd.wh"].shape[0]
    budget_b = max_len // 2 if max_len else float("inf")
    states = [nx.zero_state(1, hidden), nx.zero_state(1, hidden)]
    states = step("bwd", states, puns)
    for j in range(p):
        total += score("bwd", states, ids[p - 1 - j], forward=False)
        states = step("bwd", states, [ids[p - 1 - j]] * 2)
    if p < budget_b:
        total += score("bwd", states, BOS_ID, forward=False)

    states = [nx.zero_state(1, hidden), nx.zero_state(1, hidden)]
    states = step("fwd", states, [BOS_ID, BOS_ID])
    for t in range(p):
        states = step("fwd", states, [ids[t]] * 2)
    states = step("fwd", states, puns)
    for t in range(p + 1, n):
        total += score("fwd", states, ids[t], forward=True)
        states = step("fwd", states, [ids[t]] * 2)
    if max_len is None or n < max_len:
        total += score("fwd", states, EOS_ID, forward=True)
    return total


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.report_line(number))
