"""Toy two-sense grammar for tests, demos and the acceptance runs.

One pun lemma ("bank") with two senses. Every real sentence draws its
context words from exactly one sense's word set, so the sense is recoverable
from context and a sentence mixing both sets never occurs in real data.

``python -m pungan.synthetic OUT_DIR`` writes the corpus files.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SenseInventory, SensePair, TaggedSentence, save_sense_pairs, save_tagged_corpus

LEMMA = "bank"
CONTEXT = {
    "river": ("river", "water", "fish", "boat", "shore", "mud"),
    "finance": ("money", "loan", "cash", "account", "credit", "debt"),
}
# "B" marks the pun word, "C" a context word of the sentence's sense
TEMPLATES = (
    "i saw the B near the C",
    "the C was by the B",
    "we walked to the B with C",
    "the B had C and C",
    "a C came from the B",
    "they left the B for the C",
)


def inventory() -> SenseInventory:
    return SenseInventory({LEMMA: tuple(CONTEXT)})


def pairs() -> list[SensePair]:
    return [SensePair(LEMMA, *CONTEXT)]


def sentence(rng: np.random.Generator, sense: str, labeled: bool = True) -> TaggedSentence:
    words = TEMPLATES[rng.integers(len(TEMPLATES))].split()
    target = words.index("B")
    out = []
    for w in words:
        if w == "B":
            out.append(LEMMA)
        elif w == "C":
            out.append(CONTEXT[sense][rng.integers(len(CONTEXT[sense]))])
        else:
            out.append(w)
    return TaggedSentence.make(out, target, LEMMA, sense if labeled else None)


def corpus(rng: np.random.Generator, n: int, labeled: bool = True) -> list[TaggedSentence]:
    senses = list(CONTEXT)
    return [sentence(rng, senses[i % len(senses)], labeled) for i in range(n)]


def scramble(sent: TaggedSentence, rng: np.random.Generator) -> TaggedSentence:
    """Unlabeled copy with the words in a random order different from the original."""
    words = sent.surface_tokens()
    for _ in range(100):
        order = rng.permutation(len(words))
        if (order != np.arange(len(words))).any() and [words[i] for i in order] != words:
            break
    shuffled = [words[i] for i in order]
    return TaggedSentence.make(shuffled, int(np.nonzero(order == sent.target)[0][0]), sent.lemma)


@dataclass
class ToyData:
    inventory: SenseInventory
    labeled: list[TaggedSentence]
    unlabeled: list[TaggedSentence]
    pairs: list[SensePair]


def toy_data(seed: int = 0, n_labeled: int = 120, n_unlabeled: int = 120) -> ToyData:
    rng = np.random.default_rng(seed)
    return ToyData(inventory(), corpus(rng, n_labeled, True), corpus(rng, n_unlabeled, False), pairs())


def write_files(out_dir, seed: int = 0, n_labeled: int = 120, n_unlabeled: int = 120) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = toy_data(seed, n_labeled, n_unlabeled)
    paths = {
        "inventory": out / "inventory.tsv",
        "labeled": out / "labeled.jsonl",
        "unlabeled": out / "unlabeled.jsonl",
        "pairs": out / "pairs.jsonl",
    }
    data.inventory.save(paths["inventory"])
    save_tagged_corpus(paths["labeled"], data.labeled)
    save_tagged_corpus(paths["unlabeled"], data.unlabeled)
    save_sense_pairs(paths["pairs"], data.pairs)
    return paths


def main(argv=None):
    ap = argparse.ArgumentParser(description="write the toy two-sense corpus")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--labeled", type=int, default=120)
    ap.add_argument("--unlabeled", type=int, default=120)
    args = ap.parse_args(argv)
    for name, path in write_files(args.out_dir, args.seed, args.labeled, args.unlabeled).items():
        print(f"{name}\t{path}")


if __name__ == "__main__":
    main()
