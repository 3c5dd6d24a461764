"""Sense inventory, tagged corpora, vocabulary and batching.

File formats
------------
* inventory: UTF-8 TSV, one ``lemma<TAB>sense-id`` per line; file order is the
  sense order.
* tagged / unlabeled corpus: UTF-8 JSONL with ``tokens`` (list of strings),
  ``target`` (int), ``lemma`` (str) and optional ``sense`` (str).
* sense pairs: UTF-8 JSONL with ``lemma``, ``s1``, ``s2``.

Text is normalised by lower-casing each token; tokens are already
whitespace-split in the JSONL records.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DuplicateError, InvalidArgument, ParseError, ValidationError

log = logging.getLogger(__name__)

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"
RESERVED = (BOS, EOS, UNK)
BOS_ID, EOS_ID, UNK_ID = 0, 1, 2
SENSE_SEP = "#"
DEFAULT_MAX_LEN = 20


def sense_token(lemma: str, sense: str) -> str:
    return f"{lemma}{SENSE_SEP}{sense}"


@dataclass
class SenseInventory:
    senses: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for lemma, senses in self.senses.items():
            if not senses:
                raise ValidationError(f"lemma {lemma!r} has no senses")
            if len(set(senses)) != len(senses):
                raise DuplicateError(f"duplicate sense for lemma {lemma!r}")

    def __contains__(self, lemma) -> bool:
        return lemma in self.senses

    def __len__(self):
        return len(self.senses)

    @property
    def lemmas(self) -> list[str]:
        return list(self.senses)

    def k(self, lemma: str) -> int:
        return len(self.senses[lemma])

    def sense_index(self, lemma: str, sense: str) -> int:
        try:
            return self.senses[lemma].index(sense)
        except (KeyError, ValueError):
            raise ValidationError(f"sense {sense!r} is not listed for lemma {lemma!r}") from None

    def has_sense(self, lemma: str, sense: str) -> bool:
        return sense in self.senses.get(lemma, ())

    def pairs(self) -> list["SensePair"]:
        """Every unordered pair of distinct senses, in inventory order."""
        out = []
        for lemma, senses in self.senses.items():
            for i, s1 in enumerate(senses):
                for s2 in senses[i + 1:]:
                    out.append(SensePair(lemma, s1, s2))
        return out

    def to_lines(self) -> list[str]:
        return [f"{lemma}\t{s}" for lemma, senses in self.senses.items() for s in senses]

    def save(self, path) -> None:
        lines = self.to_lines()
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def from_lines(cls, lines: Iterable[str], path=None) -> "SenseInventory":
        senses: dict[str, list[str]] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ParseError("expected 'lemma<TAB>sense-id'", path, lineno)
            lemma, sense = parts[0].strip().lower(), parts[1].strip()
            if SENSE_SEP in lemma or SENSE_SEP in sense:
                raise ParseError(f"{SENSE_SEP!r} is reserved in lemma and sense ids", path, lineno)
            bucket = senses.setdefault(lemma, [])
            if sense in bucket:
                raise DuplicateError(f"duplicate entry ({lemma}, {sense})", path, lineno)
            bucket.append(sense)
        return cls({lemma: tuple(s) for lemma, s in senses.items()})


def load_sense_inventory(path) -> SenseInventory:
    with open(path, encoding="utf-8") as fh:
        return SenseInventory.from_lines(fh, path=path)


@dataclass(frozen=True)
class SensePair:
    lemma: str
    s1: str
    s2: str

    def __post_init__(self):
        if self.s1 == self.s2:
            raise InvalidArgument(f"sense pair for {self.lemma!r} repeats sense {self.s1!r}")

    @classmethod
    def unchecked(cls, lemma: str, s1: str, s2: str) -> "SensePair":
        """Build a pair without the distinct-senses check (degenerate test cases)."""
        pair = object.__new__(cls)
        object.__setattr__(pair, "lemma", lemma)
        object.__setattr__(pair, "s1", s1)
        object.__setattr__(pair, "s2", s2)
        return pair

    def validate(self, inventory: SenseInventory) -> None:
        if self.lemma not in inventory:
            raise ValidationError(f"pair {self}: unknown lemma {self.lemma!r}")
        for s in (self.s1, self.s2):
            if not inventory.has_sense(self.lemma, s):
                raise ValidationError(f"pair {self}: unknown sense {s!r} for lemma {self.lemma!r}")

    def to_record(self) -> dict:
        return {"lemma": self.lemma, "s1": self.s1, "s2": self.s2}

    def __str__(self):
        return f"{self.lemma}({self.s1}|{self.s2})"


@dataclass(frozen=True)
class TaggedSentence:
    """A tokenised sentence with one target position.

    When ``sense`` is set the target token is the sense-tagged form
    ``lemma#sense``; otherwise it is the bare lemma.
    """

    tokens: tuple[str, ...]
    target: int
    lemma: str
    sense: str | None = None

    @property
    def labeled(self) -> bool:
        return self.sense is not None

    def __len__(self):
        return len(self.tokens)

    def surface_tokens(self) -> list[str]:
        toks = list(self.tokens)
        toks[self.target] = self.lemma
        return toks

    def text(self) -> str:
        return " ".join(self.surface_tokens())

    def check(self, inventory: SenseInventory | None = None) -> None:
        if not self.tokens:
            raise ValidationError("empty sentence")
        if not 0 <= self.target < len(self.tokens):
            raise ValidationError(f"target {self.target} outside a {len(self.tokens)}-token sentence")
        expected = sense_token(self.lemma, self.sense) if self.labeled else self.lemma
        if self.tokens[self.target] != expected:
            raise ValidationError(f"token {self.tokens[self.target]!r} at target does not match {expected!r}")
        if inventory is not None:
            if self.lemma not in inventory:
                raise ValidationError(f"unknown lemma {self.lemma!r}")
            if self.labeled and not inventory.has_sense(self.lemma, self.sense):
                raise ValidationError(f"unknown sense {self.sense!r} for lemma {self.lemma!r}")

    def to_record(self) -> dict:
        rec = {"tokens": self.surface_tokens(), "target": self.target, "lemma": self.lemma}
        if self.labeled:
            rec["sense"] = self.sense
        return rec

    @classmethod
    def make(cls, tokens: Sequence[str], target: int, lemma: str, sense: str | None = None) -> "TaggedSentence":
        toks = [t.lower() for t in tokens]
        lemma = lemma.lower()
        if 0 <= target < len(toks) and sense is not None:
            toks[target] = sense_token(lemma, sense)
        return cls(tuple(toks), target, lemma, sense)


def _cap(tokens: list[str], target: int, max_len: int | None):
    if max_len is None or len(tokens) <= max_len:
        return tokens, target
    start = 0 if target < max_len else target - max_len + 1
    return tokens[start:start + max_len], target - start


def _first_lemma(tokens: Sequence[str], inventory: SenseInventory):
    for i, tok in enumerate(tokens):
        if tok in inventory:
            return i, tok
    return None


def parse_record(obj, inventory: SenseInventory, max_len: int | None = DEFAULT_MAX_LEN, where: str = "record"):
    """Validate one JSON object and turn it into a :class:`TaggedSentence`.

    Returns ``None`` for an unlabeled record without any inventory lemma.
    """
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) and t.strip() for t in tokens):
        raise ValidationError(f"{where}: 'tokens' must be a non-empty list of strings")
    tokens = [t.strip().lower() for t in tokens]
    sense = obj.get("sense")
    target, lemma = obj.get("target"), obj.get("lemma")
    if target is None and lemma is None and sense is None:
        found = _first_lemma(tokens, inventory)
        if found is None:
            return None
        target, lemma = found
    if not isinstance(target, int) or isinstance(target, bool):
        raise ValidationError(f"{where}: 'target' must be an integer")
    if not isinstance(lemma, str):
        raise ValidationError(f"{where}: 'lemma' must be a string")
    lemma = lemma.lower()
    if not 0 <= target < len(tokens):
        raise ValidationError(f"{where}: target {target} outside a {len(tokens)}-token sentence")
    if lemma not in inventory:
        raise ValidationError(f"{where}: unknown lemma {lemma!r}")
    if sense is not None:
        if not isinstance(sense, str) or not inventory.has_sense(lemma, sense):
            raise ValidationError(f"{where}: unknown sense {sense!r} for lemma {lemma!r}")
    if tokens[target] not in (lemma, sense_token(lemma, sense) if sense else lemma):
        raise ValidationError(f"{where}: token {tokens[target]!r} at target is not lemma {lemma!r}")
    for i, tok in enumerate(tokens):
        if i != target and SENSE_SEP in tok and tok.split(SENSE_SEP, 1)[0] in inventory:
            raise ValidationError(f"{where}: sense-tagged token {tok!r} outside the target position")
    tokens, target = _cap(tokens, target, max_len)
    sent = TaggedSentence.make(tokens, target, lemma, sense)
    sent.check(inventory)
    return sent


def load_tagged_corpus(path, inventory: SenseInventory, max_len: int | None = DEFAULT_MAX_LEN) -> list[TaggedSentence]:
    out, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            sent = parse_record(obj, inventory, max_len, where=f"{path}:{lineno}")
            if sent is None:
                skipped += 1
                continue
            out.append(sent)
    if skipped:
        log.info("%s: skipped %d unlabeled records with no inventory lemma", path, skipped)
    return out


def save_tagged_corpus(path, sentences: Iterable[TaggedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


def load_sense_pairs(path, inventory: SenseInventory) -> list[SensePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pair = SensePair(str(obj["lemma"]).lower(), str(obj["s1"]), str(obj["s2"]))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            except (KeyError, TypeError):
                raise ParseError("expected fields lemma, s1, s2", path, lineno) from None
            except InvalidArgument as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            try:
                pair.validate(inventory)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            pairs.append(pair)
    return pairs


def save_sense_pairs(path, pairs: Iterable[SensePair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")


class Vocabulary:
    """Bijective token <-> id map with reserved ids 0-2.

    Surface forms of every inventory lemma and all ``lemma#sense`` tokens are
    always present, whatever their corpus frequency.
    """

    def __init__(self, tokens: Sequence[str], inventory: SenseInventory):
        if tuple(tokens[:3]) != RESERVED:
            raise ValidationError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens are not unique")
        self.tokens = list(tokens)
        self.inventory = inventory
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.sense_ids: dict[tuple[str, str], int] = {}
        for i, tok in enumerate(self.tokens):
            if SENSE_SEP in tok and tok not in RESERVED:
                lemma, sense = tok.split(SENSE_SEP, 1)
                if not inventory.has_sense(lemma, sense):
                    raise ValidationError(f"vocabulary token {tok!r} is not in the sense inventory")
                self.sense_ids[(lemma, sense)] = i
        for lemma, senses in inventory.senses.items():
            if lemma not in self.index:
                raise ValidationError(f"vocabulary lacks lemma {lemma!r}")
            for s in senses:
                if (lemma, s) not in self.sense_ids:
                    raise ValidationError(f"vocabulary lacks {sense_token(lemma, s)!r}")
        self._sense_mask = np.zeros(len(self.tokens), dtype=bool)
        self._sense_mask[list(self.sense_ids.values())] = True

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def sense_id(self, lemma: str, sense: str) -> int:
        return self.sense_ids[(lemma, sense)]

    def generation_mask(self, lemma: str, forward: bool) -> np.ndarray:
        """Tokens a constrained decoder may emit next to a ``lemma`` pun.

        Excludes ``<unk>``, every sense-tagged token, the pun lemma itself and
        the boundary token of the opposite direction.
        """
        mask = ~self._sense_mask
        mask[UNK_ID] = False
        mask[self.index[lemma]] = False
        mask[BOS_ID if forward else EOS_ID] = False
        return mask

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path, inventory: SenseInventory) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens, inventory)


def build_vocabulary(corpora: Iterable[Iterable[TaggedSentence]], inventory: SenseInventory,
                     min_count: int = 1) -> Vocabulary:
    counts: Counter = Counter()
    for corpus in corpora:
        for sent in corpus:
            counts.update(sent.surface_tokens())
    forced = []
    for lemma, senses in inventory.senses.items():
        forced.append(lemma)
        forced.extend(sense_token(lemma, s) for s in senses)
    seen = set(RESERVED) | set(forced)
    rest = sorted((t for t, c in counts.items() if c >= min_count and t not in seen), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + forced + rest, inventory)


def batch_iter(sentences: Sequence, batch_size: int, seed) -> Iterator[list]:
    """Seeded shuffle into batches; the last batch may be short."""
    if batch_size < 1:
        raise InvalidArgument("batch_size must be at least 1")
    order = np.random.default_rng(seed).permutation(len(sentences))
    for start in range(0, len(order), batch_size):
        yield [sentences[i] for i in order[start:start + batch_size]]
