"""Ambiguity reward: large and balanced mass on both target senses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import SensePair
from .discriminator import DiscriminatorParams, classify_batch
from .errors import InvalidArgument
from .generator import GenerationTrace

_SLACK = 1e-9


def ambiguity_reward(p1: float, p2: float) -> float:
    """``(p1 + p2) / (|p1 - p2| + 1)``; lies in [0, 1] for valid inputs."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise InvalidArgument(f"sense probabilities must lie in [0, 1], got ({p1}, {p2})")
    if p1 + p2 > 1.0 + _SLACK:
        raise InvalidArgument(f"sense probabilities sum to {p1 + p2} > 1")
    return (p1 + p2) / (abs(p1 - p2) + 1.0)


@dataclass(frozen=True)
class RewardRecord:
    trace: GenerationTrace
    p1: float
    p2: float
    reward: float


@dataclass
class SampleBatch:
    """K sampled sentences with their rewards, ready for a policy-gradient step."""

    traces: list[GenerationTrace]
    rewards: np.ndarray
    records: list[RewardRecord]

    @property
    def K(self) -> int:
        return len(self.traces)

    @classmethod
    def from_rewards(cls, traces: Sequence[GenerationTrace], rewards) -> "SampleBatch":
        rewards = np.asarray(rewards, dtype=float)
        records = [RewardRecord(t, float("nan"), float("nan"), float(r)) for t, r in zip(traces, rewards)]
        return cls(list(traces), rewards, records)


def batch_rewards(disc: DiscriminatorParams, samples: Sequence[GenerationTrace], pair: SensePair | None = None) -> SampleBatch:
    """Score every sample under a fixed discriminator snapshot.

    ``pair`` defaults to each trace's own pair; when given, every trace must
    share its lemma.
    """
    pairs = []
    for t in samples:
        use = pair if pair is not None else t.pair
        if use.lemma != t.pair.lemma:
            raise InvalidArgument(f"sample for {t.pair.lemma!r} scored against pair {use}")
        pairs.append(use)
    dists = classify_batch(disc, [t.as_sentence() for t in samples])
    records = []
    for t, d, use in zip(samples, dists, pairs):
        p1, p2 = d.pair_probs(use, disc.inventory)
        records.append(RewardRecord(t, p1, p2, ambiguity_reward(p1, p2)))
    return SampleBatch(list(samples), np.array([r.reward for r in records]), records)
