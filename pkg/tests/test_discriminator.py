import numpy as np
import numpy.testing as npt
import pytest

from pungan import discriminator as D
from pungan import numerics as nx
from pungan import synthetic
from pungan.corpus import SenseInventory, SensePair, TaggedSentence, build_vocabulary
from pungan.errors import InvalidArgument, UnknownLemmaError

from conftest import LEMMA, PAIR, toy_discriminator, toy_vocab

TWO_LEMMAS = SenseInventory({"bank": ("river", "finance"), "bat": ("animal", "club", "wink")})


def _two_lemma_vocab():
    return toy_vocab(("a", "b", "c", "d"), TWO_LEMMAS)


def _reference_classify(disc, sentence):
    """Unbatched forward pass: two LSTM sweeps that stop at the target."""
    arr, vocab = disc.arrays, disc.vocab
    ids = vocab.encode(sentence.surface_tokens())
    t = sentence.target
    halves = []
    for prefix, seq in (("enc_f", ids[:t + 1]), ("enc_b", ids[::-1][:len(ids) - t])):
        cell = nx.LstmCellParams.from_arrays(arr, prefix)
        state = nx.zero_state(1, disc.hidden)
        for tok in seq:
            state = nx.lstm_step(cell, arr["emb"][[tok]], state)
        halves.append(state[0].value[0])
    c = np.concatenate(halves)
    logits = c @ arr[f"head.{sentence.lemma}.w"] + arr[f"head.{sentence.lemma}.b"][0]
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _sent(words, lemma=LEMMA, sense=None):
    return TaggedSentence.make(words, words.index(lemma), lemma, sense)


def test_zero_head_gives_uniform_distribution():
    disc = toy_discriminator(_two_lemma_vocab())
    for lemma in TWO_LEMMAS.lemmas:
        w, b = disc.head_names(lemma)
        disc.arrays[w][:] = 0.0
        disc.arrays[b][:] = 0.0
    dist = D.classify(disc, _sent(["a", "bat", "c"], "bat"))
    npt.assert_array_equal(dist.probabilities, [0.25] * 4)
    dist = D.classify(disc, _sent(["bank"]))
    npt.assert_allclose(dist.probabilities, [1 / 3] * 3, rtol=1e-15)


def test_batched_classify_matches_unbatched_reference():
    vocab = _two_lemma_vocab()
    disc = toy_discriminator(vocab, seed=3, scale=0.8)
    sents = [_sent(["a", "bank", "b", "c"]), _sent(["bat"], "bat"), _sent(["d", "d", "bat", "a"], "bat", "club"),
             _sent(["bank", "a"]), _sent(["c", "b", "a", "d", "bank"])]
    for s, dist in zip(sents, D.classify_batch(disc, sents)):
        npt.assert_allclose(dist.probabilities, _reference_classify(disc, s), rtol=1e-12)
        assert len(dist.probabilities) == TWO_LEMMAS.k(s.lemma) + 1
        assert abs(sum(dist.probabilities) - 1.0) <= 1e-9
        assert dist.real + dist.generated == pytest.approx(1.0, abs=1e-12)


def test_sense_tag_on_input_does_not_leak():
    disc = toy_discriminator(toy_vocab(), seed=1)
    tagged = _sent(["a", LEMMA, "b"], sense="river")
    bare = _sent(["a", LEMMA, "b"])
    assert D.classify(disc, tagged) == D.classify(disc, bare)


def test_encoder_is_order_sensitive():
    disc = toy_discriminator(toy_vocab(), seed=2, scale=0.8)
    a = D.classify(disc, _sent(["a", "b", LEMMA, "c"]))
    b = D.classify(disc, _sent(["b", "a", LEMMA, "c"]))
    assert a.probabilities != b.probabilities


def test_unknown_lemma():
    disc = toy_discriminator(toy_vocab())
    with pytest.raises(UnknownLemmaError):
        D.classify(disc, TaggedSentence.make(["a", "b"], 1, "b"))


def test_pair_probs_follow_inventory_order():
    inv = SenseInventory({"bat": ("animal", "club", "wink")})
    dist = D.SenseDistribution("bat", (0.1, 0.5, 0.4, 0.0))
    assert dist.pair_probs(SensePair("bat", "club", "wink"), inv) == (0.5, 0.4)
    assert dist.pair_probs(SensePair("bat", "wink", "animal"), inv) == (0.4, 0.1)
    with pytest.raises(InvalidArgument):
        dist.pair_probs(SensePair("bank", "river", "finance"), inv)


def test_sense_pair_probs_on_hand_built_head():
    vocab = toy_vocab()
    disc = toy_discriminator(vocab, seed=0)
    w, b = disc.head_names(LEMMA)
    disc.arrays[w][:] = 0.0
    disc.arrays[b][:] = np.log([[2.0, 3.0, 5.0]])
    p1, p2 = D.sense_pair_probs(disc, _sent(["a", LEMMA]), PAIR)
    assert (p1, p2) == pytest.approx((0.2, 0.3), abs=1e-15)
    p2r, p1r = D.sense_pair_probs(disc, _sent(["a", LEMMA]), SensePair(LEMMA, "finance", "river"))
    assert (p1r, p2r) == pytest.approx((0.2, 0.3), abs=1e-15)


def test_uniform_distribution_pair_probs():
    disc = toy_discriminator(toy_vocab())
    for name in disc.head_names(LEMMA):
        disc.arrays[name][:] = 0.0
    assert D.sense_pair_probs(disc, _sent([LEMMA, "a"]), PAIR) == pytest.approx((1 / 3, 1 / 3), abs=1e-15)


# ---------------------------------------------------------------------------
# loss


def _batches():
    labeled = [_sent(["a", LEMMA, "b"], sense="river"), _sent([LEMMA, "c"], sense="finance"),
               _sent(["d", "bat", "a"], "bat", "wink")]
    unlabeled = [_sent(["b", LEMMA]), _sent(["bat", "c", "c"], "bat")]
    generated = [_sent(["c", LEMMA, "a", "a"]), _sent(["bat"], "bat")]
    return labeled, unlabeled, generated


def test_loss_terms_match_direct_computation():
    disc = toy_discriminator(_two_lemma_vocab(), seed=4, scale=0.8)
    labeled, unlabeled, generated = _batches()

    def probs(s):
        return _reference_classify(disc, s)

    sup = -np.mean([np.log(probs(s)[TWO_LEMMAS.sense_index(s.lemma, s.sense)]) for s in labeled])
    unl = -np.mean([np.log(1.0 - probs(s)[-1]) for s in unlabeled])
    gen = -np.mean([np.log(probs(s)[-1]) for s in generated])
    assert D.discriminator_loss(disc, labeled, unlabeled, generated) == pytest.approx(sup + unl + gen, rel=1e-12)
    assert D.discriminator_loss(disc, labeled) == pytest.approx(sup, rel=1e-12)


def test_supervised_only_loss_is_plain_cross_entropy():
    disc = toy_discriminator(_two_lemma_vocab(), seed=5)
    labeled, _, _ = _batches()
    ce = np.mean([nx.cross_entropy(np.array(D.classify(disc, s).probabilities),
                                   TWO_LEMMAS.sense_index(s.lemma, s.sense)).value[0, 0] for s in labeled])
    assert D.discriminator_loss(disc, labeled, (), ()) == pytest.approx(ce, rel=1e-12)


def test_perfect_classifier_has_near_zero_loss():
    vocab = toy_vocab()
    disc = toy_discriminator(vocab, seed=0)
    disc.arrays = {k: np.zeros_like(v) for k, v in disc.arrays.items()}
    w, b = disc.head_names(LEMMA)
    disc.arrays[b][:] = [[60.0, 0.0, 0.0]]
    loss = D.discriminator_loss(disc, [_sent(["a", LEMMA], sense="river")], [_sent([LEMMA, "b"])])
    assert 0.0 <= loss < 1e-20


def test_labeled_batch_requires_labels():
    disc = toy_discriminator(toy_vocab())
    with pytest.raises(InvalidArgument):
        D.discriminator_loss(disc, [_sent(["a", LEMMA])])
    with pytest.raises(InvalidArgument):
        D.discriminator_loss(disc, [], [], [])


def test_loss_gradient_matches_finite_differences():
    vocab = _two_lemma_vocab()
    disc = toy_discriminator(vocab, seed=6, emb=4, hidden=8, scale=0.5)
    labeled, unlabeled, generated = _batches()
    report = nx.grad_check(lambda p: D.discriminator_loss_var(p, disc, labeled, unlabeled, generated), disc.arrays)
    assert report.passed, report


def test_head_isolation():
    vocab = _two_lemma_vocab()
    disc = toy_discriminator(vocab, seed=7)
    before = disc.copy()
    labeled = [_sent(["a", LEMMA, "b"], sense="river"), _sent([LEMMA, "c"], sense="finance")]
    for _ in range(5):
        D.discriminator_train_step(disc, labeled, [_sent(["b", LEMMA])], [_sent(["c", LEMMA, "a"])], lr=0.5)
    for name in disc.head_names("bat"):
        npt.assert_array_equal(disc.arrays[name], before.arrays[name])
    assert not np.array_equal(disc.arrays["head.bank.w"], before.arrays["head.bank.w"])


def test_loss_decreases_on_a_fixed_batch():
    disc = toy_discriminator(_two_lemma_vocab(), seed=8)
    labeled, unlabeled, generated = _batches()
    losses = [D.discriminator_train_step(disc, labeled, unlabeled, generated, lr=0.05) for _ in range(11)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_step_accepts_generation_traces():
    from conftest import toy_generator
    from pungan.generator import sample_batch
    gen = toy_generator()
    disc = toy_discriminator(gen.vocab)
    traces = sample_batch(gen, [PAIR] * 3, np.random.default_rng(0), 5)
    loss = D.discriminator_train_step(disc, [_sent(["a", LEMMA], sense="river")], (), traces, lr=0.1)
    assert np.isfinite(loss)


def test_supervised_training_beats_chance():
    # the full 200-step, three-term run is an acceptance criterion
    data = synthetic.toy_data(0, 200, 200)
    vocab = build_vocabulary([data.labeled, data.unlabeled], data.inventory)
    disc = D.init_discriminator(vocab, data.inventory, 16, 16, np.random.default_rng(0), 0.5)
    held_out = synthetic.toy_data(1, 100, 0).labeled
    rng = np.random.default_rng(0)
    for _ in range(100):
        idx = rng.choice(len(data.labeled), 32, replace=False)
        D.discriminator_train_step(disc, [data.labeled[i] for i in idx], lr=1.0)
    assert D.accuracy(disc, held_out) > 0.7  # chance is 0.5
