"""Automatic metrics: unusualness and corpus-level distinct-n."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import generator as gen_mod
from .corpus import SensePair, TaggedSentence
from .discriminator import DiscriminatorParams
from .errors import InvalidArgument, UndefinedMetric
from .generator import GeneratorParams
from .reward import batch_rewards

REPORT_SCHEMA = {
    "type": "object",
    "required": ["unusualness", "dist1", "dist2", "sentence_count"],
    "properties": {
        "unusualness": {"type": "number"},
        "dist1": {"type": "number", "minimum": 0, "maximum": 100},
        "dist2": {"type": "number", "minimum": 0, "maximum": 100},
        "sentence_count": {"type": "integer", "minimum": 1},
        "mean_reward": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class MetricReport:
    unusualness: float
    dist1: float
    dist2: float
    sentence_count: int
    mean_reward: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.dist1 <= 100.0 and 0.0 <= self.dist2 <= 100.0):
            raise InvalidArgument("distinct-n percentages must lie in [0, 100]")
        if self.sentence_count < 1:
            raise InvalidArgument("a report needs at least one sentence")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table(self) -> str:
        rows = [("Unusualness", f"{self.unusualness:.4f}"), ("Dist-1", f"{self.dist1:.2f}"),
                ("Dist-2", f"{self.dist2:.2f}"), ("Sentences", str(self.sentence_count))]
        if self.mean_reward is not None:
            rows.append(("Mean reward", f"{self.mean_reward:.4f}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _tokens(sentence) -> list[str]:
    if isinstance(sentence, str):
        return sentence.split()
    if isinstance(sentence, TaggedSentence):
        return sentence.surface_tokens()
    if hasattr(sentence, "tokens"):
        return list(sentence.tokens)
    return list(sentence)


def distinct_n(sentences: Iterable, n: int) -> float:
    """Percentage of distinct n-grams among all n-grams, pooled over sentences."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    seen, count = set(), 0
    empty = True
    for s in sentences:
        empty = False
        toks = _tokens(s)
        for i in range(len(toks) - n + 1):
            seen.add(tuple(toks[i:i + n]))
            count += 1
    if empty:
        raise InvalidArgument("distinct-n of an empty sentence list")
    if count == 0:
        raise UndefinedMetric(f"every sentence is shorter than {n} tokens")
    return 100.0 * len(seen) / count


def _per_token(lm: GeneratorParams, sentences: Sequence[TaggedSentence]) -> float:
    logp, tokens = gen_mod.lm_logprobs(lm, sentences)
    return float(logp.sum() / tokens.sum())


def unusualness(lm: GeneratorParams, generated: Sequence[TaggedSentence], training_sample: Sequence[TaggedSentence]) -> float:
    """Per-token LM log-probability of generated text minus that of training text.

    Both sides are scored by the same single-sense forward LM; tokens are
    pooled within each side, and ``<eos>`` counts as a token.
    """
    if not generated or not training_sample:
        raise InvalidArgument("unusualness needs non-empty generated and training sets")
    return _per_token(lm, generated) - _per_token(lm, training_sample)


def evaluate_run(generator: GeneratorParams, disc: DiscriminatorParams | None, pairs: Sequence[SensePair],
                 training_sample: Sequence[TaggedSentence], count: int, seed: int, max_len: int,
                 decode: str = "sample", scoring_lm: GeneratorParams | None = None) -> MetricReport:
    """Sample ``count`` sentences, cycling through ``pairs``, and score them.

    Generated sentences are read by the scoring LM with the pun word tagged as
    the pair's first sense. ``scoring_lm`` defaults to ``generator``.
    """
    if count < 1:
        raise InvalidArgument("count must be at least 1")
    if not pairs:
        raise InvalidArgument("evaluation needs at least one sense pair")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    chosen = [pairs[i % len(pairs)] for i in range(count)]
    traces = gen_mod.sample_batch(generator, chosen, rng, max_len, greedy=decode == "greedy")
    tagged = [t.as_sentence(t.pair.s1) for t in traces]
    lm = scoring_lm if scoring_lm is not None else generator
    reward = None
    if disc is not None:
        reward = float(batch_rewards(disc, traces).rewards.mean())
    try:
        dist2 = distinct_n(traces, 2)
    except UndefinedMetric:
        dist2 = 0.0
    return MetricReport(
        unusualness=unusualness(lm, tagged, training_sample),
        dist1=distinct_n(traces, 1),
        dist2=dist2,
        sentence_count=count,
        mean_reward=reward,
    )
