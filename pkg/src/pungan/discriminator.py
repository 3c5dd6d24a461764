"""Semi-supervised word-sense discriminator with a per-lemma "generated" class.

A shared bidirectional LSTM encodes the sentence; the context vector is the
forward and backward hidden states at the target position, concatenated.
Each lemma owns a head producing ``k + 1`` logits: its ``k`` senses in
inventory order followed by the generated class.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .corpus import SenseInventory, SensePair, TaggedSentence, Vocabulary
from .errors import InvalidArgument, UnknownLemmaError


@dataclass
class DiscriminatorParams:
    vocab: Vocabulary
    inventory: SenseInventory
    arrays: dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.arrays["enc_f.wh"].shape[0]

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(self.vocab, self.inventory, {k: v.copy() for k, v in self.arrays.items()})

    def head_names(self, lemma: str) -> tuple[str, str]:
        return f"head.{lemma}.w", f"head.{lemma}.b"


def init_discriminator(vocab: Vocabulary, inventory: SenseInventory, emb_dim: int, hidden: int,
                       rng: np.random.Generator, init_scale: float = 0.08) -> DiscriminatorParams:
    arrays = {"emb": nx.uniform_init(rng, (len(vocab), emb_dim), init_scale)}
    arrays.update(nx.init_lstm(rng, emb_dim, hidden, "enc_f", init_scale))
    arrays.update(nx.init_lstm(rng, emb_dim, hidden, "enc_b", init_scale))
    for lemma in inventory.lemmas:
        k = inventory.k(lemma)
        arrays[f"head.{lemma}.w"] = nx.uniform_init(rng, (2 * hidden, k + 1), init_scale)
        arrays[f"head.{lemma}.b"] = nx.uniform_init(rng, (1, k + 1), init_scale)
    return DiscriminatorParams(vocab, inventory, arrays)


@dataclass(frozen=True)
class SenseDistribution:
    lemma: str
    probabilities: tuple[float, ...]

    @property
    def generated(self) -> float:
        return self.probabilities[-1]

    @property
    def real(self) -> float:
        """Mass on the k real senses."""
        return float(sum(self.probabilities[:-1]))

    def pair_probs(self, pair: SensePair, inventory: SenseInventory) -> tuple[float, float]:
        if pair.lemma != self.lemma:
            raise InvalidArgument(f"pair {pair} does not belong to lemma {self.lemma!r}")
        if not (inventory.has_sense(pair.lemma, pair.s1) and inventory.has_sense(pair.lemma, pair.s2)):
            raise InvalidArgument(f"pair {pair} has a sense outside the inventory")
        i, j = inventory.sense_index(pair.lemma, pair.s1), inventory.sense_index(pair.lemma, pair.s2)
        return self.probabilities[i], self.probabilities[j]


def _encode(p: Mapping[str, nx.Var], vocab: Vocabulary, sentences: Sequence[TaggedSentence]) -> nx.Var:
    """(B, 2H) context vectors at each sentence's target position."""
    ids = [vocab.encode(s.surface_tokens()) for s in sentences]
    targets = np.array([s.target for s in sentences])
    lengths = np.array([len(x) for x in ids])
    width = lengths.max()
    fwd = np.zeros((len(ids), width), dtype=np.int64)
    bwd = np.zeros((len(ids), width), dtype=np.int64)
    for i, seq in enumerate(ids):
        fwd[i, :len(seq)] = seq
        bwd[i, :len(seq)] = seq[::-1]
    halves = []
    for prefix, inputs, stop in (("enc_f", fwd, targets), ("enc_b", bwd, lengths - 1 - targets)):
        cell = nx.LstmCellParams(p[prefix + ".wx"], p[prefix + ".wh"], p[prefix + ".b"])
        state = nx.zero_state(len(ids), cell.hidden_size)
        hs = []
        for t in range(stop.max() + 1):
            state = nx.lstm_step(cell, nx.take_rows(p["emb"], inputs[:, t]), state)
            hs.append(state[0])
        halves.append(nx.select_steps(hs, stop))
    return nx.concat_cols(*halves)


def _head_probs(p, inventory, sentences, context):
    """Yield (lemma, row indices, (n, k+1) probability variable) per lemma group."""
    groups: dict[str, list[int]] = defaultdict(list)
    for i, s in enumerate(sentences):
        if s.lemma not in inventory:
            raise UnknownLemmaError(f"no discriminator head for lemma {s.lemma!r}")
        groups[s.lemma].append(i)
    for lemma, idx in groups.items():
        c = context if len(idx) == len(sentences) else nx.take_rows(context, idx)
        logits = nx.add(nx.matmul(c, p[f"head.{lemma}.w"]), p[f"head.{lemma}.b"])
        yield lemma, idx, nx.softmax(logits)


def classify_batch(params: DiscriminatorParams, sentences: Sequence[TaggedSentence]) -> list[SenseDistribution]:
    if not sentences:
        return []
    p = {k: nx.Var(v) for k, v in params.arrays.items()}
    for s in sentences:
        if s.lemma not in params.inventory:
            raise UnknownLemmaError(f"no discriminator head for lemma {s.lemma!r}")
    context = _encode(p, params.vocab, sentences)
    out: list[SenseDistribution | None] = [None] * len(sentences)
    for lemma, idx, probs in _head_probs(p, params.inventory, sentences, context):
        for row, i in enumerate(idx):
            out[i] = SenseDistribution(lemma, tuple(float(x) for x in probs.value[row]))
    return out


def classify(params: DiscriminatorParams, sentence: TaggedSentence) -> SenseDistribution:
    """Distribution over the lemma's senses plus the generated class.

    The target word is always read as its bare lemma, so a sense tag on the
    input never leaks into the prediction.
    """
    return classify_batch(params, [sentence])[0]


def sense_pair_probs(params: DiscriminatorParams, sentence: TaggedSentence, pair: SensePair) -> tuple[float, float]:
    if sentence.lemma != pair.lemma:
        raise InvalidArgument(f"sentence lemma {sentence.lemma!r} does not match pair {pair}")
    return classify(params, sentence).pair_probs(pair, params.inventory)


def discriminator_loss_var(p: Mapping[str, nx.Var], params: DiscriminatorParams,
                           labeled: Sequence[TaggedSentence], unlabeled: Sequence[TaggedSentence],
                           generated: Sequence[TaggedSentence]) -> nx.Var:
    """Sum of three batch means: supervised sense NLL, real-vs-generated on
    unlabeled text, and generated-class NLL on generator output. An empty
    batch drops its term."""
    for s in labeled:
        if not s.labeled:
            raise InvalidArgument(f"labeled batch contains an unlabeled sentence: {s.text()!r}")
    sentences = list(labeled) + list(unlabeled) + list(generated)
    if not sentences:
        raise InvalidArgument("all three discriminator batches are empty")
    role = np.array([0] * len(labeled) + [1] * len(unlabeled) + [2] * len(generated))
    counts = [len(labeled), len(unlabeled), len(generated)]
    inventory = params.inventory
    context = _encode(p, params.vocab, sentences)
    loss = None
    for lemma, idx, probs in _head_probs(p, inventory, sentences, context):
        k = inventory.k(lemma)
        idx = np.asarray(idx)
        roles = role[idx]
        for r in (0, 1, 2):
            rows = np.nonzero(roles == r)[0]
            if rows.size == 0:
                continue
            sub = probs if rows.size == idx.size else nx.take_rows(probs, rows)
            if r == 0:
                labels = [inventory.sense_index(lemma, sentences[idx[j]].sense) for j in rows]
                logp = nx.log(nx.pick(sub, labels))
            elif r == 1:
                logp = nx.log(nx.row_sum(nx.slice_cols(sub, 0, k)))
            else:
                logp = nx.log(nx.pick(sub, np.full(rows.size, k)))
            term = nx.weighted_total(logp, -1.0 / counts[r])
            loss = term if loss is None else nx.add(loss, term)
    return loss


def _as_sentences(batch) -> list[TaggedSentence]:
    return [b if isinstance(b, TaggedSentence) else b.as_sentence() for b in batch]


def discriminator_loss(params: DiscriminatorParams, labeled, unlabeled=(), generated=()) -> float:
    p = {k: nx.Var(v) for k, v in params.arrays.items()}
    loss = discriminator_loss_var(p, params, labeled, unlabeled, _as_sentences(generated))
    return float(loss.value[0, 0])


def discriminator_train_step(params: DiscriminatorParams, labeled, unlabeled=(), generated=(), lr: float = 0.001,
                             clip_norm: float | None = None) -> float:
    """One SGD step on the three-term objective; ``generated`` may hold traces."""
    tape = nx.Tape()
    p = tape.bind(params.arrays)
    loss = discriminator_loss_var(p, params, labeled, unlabeled, _as_sentences(generated))
    grads = nx.backward(tape, loss, p)
    params.arrays = nx.sgd_step(params.arrays, grads, lr, clip_norm)
    return float(loss.value[0, 0])


def accuracy(params: DiscriminatorParams, labeled: Sequence[TaggedSentence]) -> float:
    """Fraction of labeled sentences whose most probable real sense is the label."""
    dists = classify_batch(params, labeled)
    hits = 0
    for s, d in zip(labeled, dists):
        k = params.inventory.k(s.lemma)
        hits += int(np.argmax(d.probabilities[:k]) == params.inventory.sense_index(s.lemma, s.sense))
    return hits / len(labeled)
