"""Dual-sense constrained language model.

Decoding starts at the pun word and runs a backward LM right-to-left until
``<bos>`` or a budget of ``max_len // 2`` tokens, then a forward LM
left-to-right until ``<eos>`` or ``max_len`` tokens in total. Both LMs share
one embedding table. At every step two copies of the recurrent state run
side by side, identical except that the pun word is embedded as
``lemma#s1`` in one and ``lemma#s2`` in the other; the next-token
distribution is the equal-weight mixture of their two softmaxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS_ID, EOS_ID, SensePair, TaggedSentence, Vocabulary, sense_token
from .errors import InvalidArgument, ShapeError

DIRECTIONS = ("fwd", "bwd")


@dataclass
class GeneratorParams:
    vocab: Vocabulary
    arrays: dict[str, np.ndarray]

    @property
    def emb_dim(self) -> int:
        return self.arrays["emb"].shape[1]

    @property
    def hidden(self) -> int:
        return self.arrays["fwd.wh"].shape[0]

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.vocab, {k: v.copy() for k, v in self.arrays.items()})


def init_generator(vocab: Vocabulary, emb_dim: int, hidden: int, rng: np.random.Generator,
                   init_scale: float = 0.08) -> GeneratorParams:
    v = len(vocab)
    arrays = {"emb": nx.uniform_init(rng, (v, emb_dim), init_scale)}
    for d in DIRECTIONS:
        arrays.update(nx.init_lstm(rng, emb_dim, hidden, d, init_scale))
        arrays[d + ".out_w"] = nx.uniform_init(rng, (hidden, v), init_scale)
        arrays[d + ".out_b"] = nx.uniform_init(rng, (1, v), init_scale)
    return GeneratorParams(vocab, arrays)


@dataclass(frozen=True)
class GenerationTrace:
    """A decoded sentence plus the mixture log-probability of each decision."""

    tokens: tuple[str, ...]
    target: int
    pair: SensePair
    step_logprobs: tuple[float, ...]
    max_len: int
    logprob: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "logprob", math.fsum(self.step_logprobs))

    def text(self) -> str:
        return " ".join(self.tokens)

    def as_sentence(self, sense: str | None = None) -> TaggedSentence:
        """Unlabeled sentence with the bare pun word, or tagged with ``sense``."""
        return TaggedSentence.make(self.tokens, self.target, self.pair.lemma, sense)


# ---------------------------------------------------------------------------
# mixture


def mixture_step(params: GeneratorParams, state1, state2, direction: str = "fwd", mask=None) -> np.ndarray:
    """Equal-weight mixture of the two sense-conditioned next-token softmaxes."""
    h1, h2 = (nx.as_matrix(s.value if isinstance(s, nx.Var) else s) for s in (state1, state2))
    w, b = params.arrays[direction + ".out_w"], params.arrays[direction + ".out_b"]
    if h1.shape != h2.shape or h1.shape[1] != w.shape[0]:
        raise ShapeError(f"mixture_step: states {h1.shape}/{h2.shape} vs projection {w.shape}")
    p1 = nx.softmax(h1 @ w + b, mask).value
    p2 = nx.softmax(h2 @ w + b, mask).value
    return 0.5 * (p1 + p2)


def _mix(probs: nx.Var, rows: int, paths: int) -> nx.Var:
    if paths == 1:
        return probs
    return nx.scale(nx.add(nx.slice_rows(probs, 0, rows), nx.slice_rows(probs, rows, 2 * rows)), 0.5)


def _cell(p: Mapping[str, nx.Var], direction: str) -> nx.LstmCellParams:
    return nx.LstmCellParams(p[direction + ".wx"], p[direction + ".wh"], p[direction + ".b"])


def _run_direction(p, direction, inputs, targets, factor, masks, paths):
    """Teacher-forced pass of one direction over padded rows.

    ``inputs`` is (paths*B, T); ``targets`` and ``factor`` are (B, T) and a
    step contributes ``log mixture[target]`` where ``factor`` is 1. Returns a
    (B, 1) variable of summed log-probabilities and the (B, T) array of
    per-step values (zero where ``factor`` is 0).
    """
    rows = targets.shape[0]
    steps_used = np.nonzero(factor.any(axis=0))[0]
    per_step = np.zeros(targets.shape)
    acc = None
    if steps_used.size == 0:
        return nx.Var(np.zeros((rows, 1))), per_step
    cell = _cell(p, direction)
    state = nx.zero_state(inputs.shape[0], cell.hidden_size)
    out_w, out_b = p[direction + ".out_w"], p[direction + ".out_b"]
    for t in range(steps_used[-1] + 1):
        x = nx.take_rows(p["emb"], inputs[:, t])
        state = nx.lstm_step(cell, x, state)
        live = factor[:, t]
        if not live.any():
            continue
        logits = nx.add(nx.matmul(state[0], out_w), out_b)
        mix = _mix(nx.softmax(logits, masks), rows, paths)
        lp = nx.log(nx.pick(mix, targets[:, t]))
        per_step[:, t] = np.where(live, lp.value[:, 0], 0.0)
        term = nx.mul(lp, live[:, None].astype(float))
        acc = term if acc is None else nx.add(acc, term)
    return acc, per_step


@dataclass
class _Layout:
    """Padded index arrays for scoring a batch of sentences."""

    paths: int
    bwd_inputs: np.ndarray
    bwd_targets: np.ndarray
    bwd_factor: np.ndarray
    bwd_masks: np.ndarray | None
    fwd_inputs: np.ndarray
    fwd_targets: np.ndarray
    fwd_factor: np.ndarray
    fwd_masks: np.ndarray | None


def _layout(vocab: Vocabulary, rows, max_len: int | None, constrained: bool, fwd_all: bool, bwd: bool = True):
    """Build padded inputs/targets for ``rows`` of (ids, target, sense_ids, lemma).

    ``sense_ids`` holds the pun-token id for each decoding path. With
    ``constrained`` the step distributions carry the generation masks and the
    length budget of ``max_len`` decides which boundary tokens are scored.
    ``fwd_all`` scores the forward LM on every position (plain LM) instead of
    only after the pun word.
    """
    paths = len(rows[0][2])
    n_rows = len(rows)
    budget_b = math.inf if max_len is None else max_len // 2
    budget_f = math.inf if max_len is None else max_len
    tb = max(r[1] for r in rows) + 1
    tf = max(len(r[0]) for r in rows) + 1
    bi = np.zeros((paths * n_rows, tb), dtype=np.int64)
    bt = np.zeros((n_rows, tb), dtype=np.int64)
    bfac = np.zeros((n_rows, tb), dtype=bool)
    fi = np.zeros((paths * n_rows, tf), dtype=np.int64)
    ft = np.zeros((n_rows, tf), dtype=np.int64)
    ffac = np.zeros((n_rows, tf), dtype=bool)
    bmask = fmask = None
    if constrained:
        bmask = np.stack([vocab.generation_mask(r[3], forward=False) for r in rows] * paths)
        fmask = np.stack([vocab.generation_mask(r[3], forward=True) for r in rows] * paths)
    for i, (ids, p, sense_ids, _lemma) in enumerate(rows):
        n = len(ids)
        if bwd:
            left = [ids[p - j] for j in range(1, p + 1)]
            n_steps = p + (1 if p < budget_b else 0)
            for k, sid in enumerate(sense_ids):
                seq = [sid] + left
                bi[k * n_rows + i, :n_steps] = seq[:n_steps]
            tgt = [ids[p - 1 - j] for j in range(p)] + [BOS_ID]
            bt[i, :n_steps] = tgt[:n_steps]
            bfac[i, :n_steps] = True
        for k, sid in enumerate(sense_ids):
            seq = [BOS_ID] + list(ids)
            seq[p + 1] = sid
            fi[k * n_rows + i, :n + 1] = seq
        ft[i, :n] = ids
        ft[i, n] = EOS_ID
        first = 0 if fwd_all else p + 1
        last = n if n < budget_f else n - 1
        ffac[i, first:last + 1] = True
    for targets, factor, masks in ((bt, bfac, bmask), (ft, ffac, fmask)):
        if masks is not None:
            # padded slots must point at a token with nonzero probability
            first_ok = masks[:n_rows].argmax(axis=1)
            targets[~factor] = np.broadcast_to(first_ok[:, None], targets.shape)[~factor]
    return _Layout(paths, bi, bt, bfac, bmask, fi, ft, ffac, fmask)


def _score_layout(p, layout: _Layout, use_bwd: bool = True):
    fwd_sum, fwd_steps = _run_direction(p, "fwd", layout.fwd_inputs, layout.fwd_targets, layout.fwd_factor,
                                        layout.fwd_masks, layout.paths)
    if not use_bwd:
        return fwd_sum, None, fwd_steps
    bwd_sum, bwd_steps = _run_direction(p, "bwd", layout.bwd_inputs, layout.bwd_targets, layout.bwd_factor,
                                        layout.bwd_masks, layout.paths)
    return nx.add(fwd_sum, bwd_sum), bwd_steps, fwd_steps


def _pair_rows(params: GeneratorParams, sentences: Sequence[TaggedSentence], pairs: Sequence[SensePair]):
    vocab = params.vocab
    rows = []
    for sent, pair in zip(sentences, pairs):
        if sent.lemma != pair.lemma:
            raise InvalidArgument(f"sentence lemma {sent.lemma!r} does not match pair {pair}")
        for s in (pair.s1, pair.s2):
            if (pair.lemma, s) not in vocab.sense_ids:
                raise InvalidArgument(f"sense {s!r} of {pair.lemma!r} is not in the vocabulary")
        ids = vocab.encode(sent.surface_tokens())
        rows.append((ids, sent.target, (vocab.sense_id(pair.lemma, pair.s1), vocab.sense_id(pair.lemma, pair.s2)),
                     pair.lemma))
    return rows


def sentence_logprob_var(p: Mapping[str, nx.Var], params: GeneratorParams, sentences, pairs,
                         max_len: int | None = None) -> nx.Var:
    """(B, 1) log G(x | s1, s2) for each sentence, recorded on ``p``'s tape."""
    rows = _pair_rows(params, sentences, pairs)
    total, _, _ = _score_layout(p, _layout(params.vocab, rows, max_len, constrained=True, fwd_all=False))
    return total


def sentence_logprobs(params: GeneratorParams, sentences: Sequence[TaggedSentence], pairs: Sequence[SensePair],
                      max_len: int | None = None) -> np.ndarray:
    if not sentences:
        return np.zeros(0)
    p = {k: nx.Var(v) for k, v in params.arrays.items()}
    with np.errstate(divide="ignore"):
        out = sentence_logprob_var(p, params, sentences, pairs, max_len).value[:, 0].copy()
    if max_len is not None:
        # outside the decoder's reach: too long, or too many words before the pun
        for i, s in enumerate(sentences):
            if len(s) > max_len or s.target > max_len // 2:
                out[i] = -np.inf
    return out


def sentence_logprob(params: GeneratorParams, sentence: TaggedSentence, pair: SensePair,
                     max_len: int | None = None) -> float:
    """log G(x | s1, s2): sum of log mixture probabilities of every decision.

    With ``max_len`` the length budget applies: a boundary token that the
    decoder would not have had the chance to emit is not scored.
    """
    return float(sentence_logprobs(params, [sentence], [pair], max_len)[0])


# ---------------------------------------------------------------------------
# sampling


def _sample_index(probs: np.ndarray, rng: np.random.Generator, greedy: bool) -> np.ndarray:
    if greedy:
        return probs.argmax(axis=1)
    cum = np.cumsum(probs, axis=1)
    u = (1.0 - rng.random(probs.shape[0]))[:, None] * cum[:, -1:]
    return (cum < u).sum(axis=1)


def _probs(arrays, direction, h, rows, paths, masks):
    logits = h @ arrays[direction + ".out_w"] + arrays[direction + ".out_b"]
    probs = nx.softmax(logits, masks).value
    return probs if paths == 1 else 0.5 * (probs[:rows] + probs[rows:])


def sample_batch(params: GeneratorParams, pairs: Sequence[SensePair], rng: np.random.Generator, max_len: int,
                 greedy: bool = False) -> list[GenerationTrace]:
    """Decode one sentence per entry of ``pairs`` in a single vectorised pass."""
    if max_len < 1:
        raise InvalidArgument("max_len must be at least 1")
    n = len(pairs)
    if n == 0:
        return []
    vocab, arrays = params.vocab, params.arrays
    for pair in pairs:
        for s in (pair.s1, pair.s2):
            if (pair.lemma, s) not in vocab.sense_ids:
                raise InvalidArgument(f"pair {pair}: sense {s!r} is not in the vocabulary")
    pun = np.array([vocab.sense_id(p.lemma, p.s1) for p in pairs] + [vocab.sense_id(p.lemma, p.s2) for p in pairs])
    bmask = np.stack([vocab.generation_mask(p.lemma, forward=False) for p in pairs] * 2)
    fmask = np.stack([vocab.generation_mask(p.lemma, forward=True) for p in pairs] * 2)
    emb = arrays["emb"]

    left = [[] for _ in range(n)]
    left_lp = [[] for _ in range(n)]
    cell = nx.LstmCellParams.from_arrays(arrays, "bwd")
    h, c = nx.zero_state(2 * n, cell.hidden_size)
    inp = pun
    active = np.ones(n, dtype=bool)
    for _ in range(max_len // 2):
        h, c = nx.lstm_step(cell, emb[inp], (h, c))
        probs = _probs(arrays, "bwd", h.value, n, 2, bmask)
        choice = _sample_index(probs, rng, greedy)
        for i in np.nonzero(active)[0]:
            left_lp[i].append(float(np.log(probs[i, choice[i]])))
            if choice[i] == BOS_ID:
                active[i] = False
            else:
                left[i].append(int(choice[i]))
        if not active.any():
            break
        inp = np.concatenate([choice, choice])

    # forward LM over <bos> + prefix + pun; keep each row's state at its own end
    prefixes = [[BOS_ID] + l[::-1] for l in left]
    lengths = np.array([len(pf) for pf in prefixes])
    cell = nx.LstmCellParams.from_arrays(arrays, "fwd")
    hidden = cell.hidden_size
    h, c = np.zeros((2 * n, hidden)), np.zeros((2 * n, hidden))
    for t in range(lengths.max() + 1):
        ids = np.array([pf[t] if t < len(pf) else pun[i] if t == len(pf) else 0 for i, pf in enumerate(prefixes)])
        ids2 = np.concatenate([ids, ids])
        pun_now = np.concatenate([lengths == t, lengths == t])
        ids2[pun_now] = pun[pun_now]
        hv, cv = nx.lstm_step(cell, emb[ids2], (h, c))
        live = np.concatenate([lengths >= t, lengths >= t])[:, None]
        h, c = np.where(live, hv.value, h), np.where(live, cv.value, c)

    right = [[] for _ in range(n)]
    right_lp = [[] for _ in range(n)]
    length = lengths.copy()  # <bos> + prefix == prefix + pun
    active = length < max_len
    while active.any():
        probs = _probs(arrays, "fwd", h, n, 2, fmask)
        choice = _sample_index(probs, rng, greedy)
        for i in np.nonzero(active)[0]:
            right_lp[i].append(float(np.log(probs[i, choice[i]])))
            if choice[i] == EOS_ID:
                active[i] = False
            else:
                right[i].append(int(choice[i]))
                length[i] += 1
                if length[i] >= max_len:
                    active[i] = False
        if not active.any():
            break
        hv, cv = nx.lstm_step(cell, emb[np.concatenate([choice, choice])], (h, c))
        h, c = hv.value, cv.value

    traces = []
    for i, pair in enumerate(pairs):
        ids = left[i][::-1] + [vocab.id(pair.lemma)] + right[i]
        traces.append(GenerationTrace(tuple(vocab.decode(ids)), len(left[i]), pair,
                                      tuple(left_lp[i] + right_lp[i]), max_len))
    return traces


def sample_sentence(params: GeneratorParams, pair: SensePair, rng: np.random.Generator, max_len: int,
                    greedy: bool = False) -> GenerationTrace:
    return sample_batch(params, [pair], rng, max_len, greedy)[0]


# ---------------------------------------------------------------------------
# training


def mle_loss_var(p: Mapping[str, nx.Var], params: GeneratorParams, batch: Sequence[TaggedSentence]):
    """Mean per-token NLL of single-sense sentences; returns (loss, token count).

    The forward LM is scored on every token of ``<bos> x <eos>``; the backward
    LM on the reversed prefix starting at the sense-tagged word and ending in
    ``<bos>``, which is exactly what it generates at decode time.
    """
    if not batch:
        raise InvalidArgument("empty batch")
    vocab = params.vocab
    rows = []
    for sent in batch:
        if not sent.labeled:
            raise InvalidArgument(f"MLE pretraining needs sense-labeled sentences: {sent.text()!r}")
        ids = vocab.encode(sent.tokens)
        rows.append((ids, sent.target, (ids[sent.target],), sent.lemma))
    layout = _layout(vocab, rows, None, constrained=False, fwd_all=True)
    total, _, _ = _score_layout(p, layout)
    tokens = int(layout.fwd_factor.sum() + layout.bwd_factor.sum())
    return nx.scale(nx.total(total), -1.0 / tokens), tokens


def mle_pretrain_step(params: GeneratorParams, batch: Sequence[TaggedSentence], lr: float,
                      clip_norm: float | None = None) -> float:
    tape = nx.Tape()
    p = tape.bind(params.arrays)
    loss, _ = mle_loss_var(p, params, batch)
    grads = nx.backward(tape, loss, p)
    params.arrays = nx.sgd_step(params.arrays, grads, lr, clip_norm)
    return float(loss.value[0, 0])


def lm_logprobs(params: GeneratorParams, sentences: Sequence[TaggedSentence]) -> tuple[np.ndarray, np.ndarray]:
    """Forward-LM log-probability and predicted-token count of each sentence.

    Single-sense scoring: each sentence is read exactly as written, including
    ``<eos>``; there is no mixture and no masking.
    """
    vocab = params.vocab
    rows = []
    for s in sentences:
        ids = vocab.encode(s.tokens)
        rows.append((ids, s.target, (ids[s.target],), s.lemma))
    layout = _layout(vocab, rows, None, constrained=False, fwd_all=True, bwd=False)
    p = {k: nx.Var(v) for k, v in params.arrays.items()}
    total, _, _ = _score_layout(p, layout, use_bwd=False)
    return total.value[:, 0].copy(), layout.fwd_factor.sum(axis=1).astype(float)


def surrogate_loss_var(p: Mapping[str, nx.Var], params: GeneratorParams, traces: Sequence[GenerationTrace],
                       rewards) -> nx.Var:
    """-(1/K) * sum_k r_k * log G(x_k), with rewards as constants."""
    rewards = np.asarray(rewards, dtype=float).reshape(-1, 1)
    max_lens = {t.max_len for t in traces}
    if len(max_lens) != 1:
        raise InvalidArgument("all traces in a batch must share max_len")
    logp = sentence_logprob_var(p, params, [t.as_sentence() for t in traces], [t.pair for t in traces],
                                max_lens.pop())
    return nx.weighted_total(logp, -rewards / len(traces))


def policy_gradient_step(params: GeneratorParams, samples, lr: float, baseline: bool = False,
                         clip_norm: float | None = None) -> float:
    """One REINFORCE update from a :class:`~pungan.reward.SampleBatch`.

    ``baseline`` subtracts the batch-mean reward before weighting.
    """
    traces, rewards = samples.traces, np.asarray(samples.rewards, dtype=float)
    if len(traces) == 0:
        raise InvalidArgument("policy gradient needs at least one sample")
    if baseline:
        rewards = rewards - rewards.mean()
    tape = nx.Tape()
    p = tape.bind(params.arrays)
    loss = surrogate_loss_var(p, params, traces, rewards)
    grads = nx.backward(tape, loss, p)
    params.arrays = nx.sgd_step(params.arrays, grads, lr, clip_norm)
    return float(loss.value[0, 0])


def pun_token(pair: SensePair, which: int) -> str:
    return sense_token(pair.lemma, pair.s1 if which == 1 else pair.s2)
