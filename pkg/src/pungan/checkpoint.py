"""Versioned JSON container for model parameters.

Layout::

    {"format": "pungan-checkpoint", "version": 1, "model_type": "generator",
     "meta": {...}, "vocab": [...], "inventory": [["lemma", ["s1", ...]], ...],
     "tensors": {"emb": {"shape": [V, E], "data": [...]}, ...}}

Floats are written with Python's shortest round-trip repr, so loading gives
back bit-identical arrays. Keys are sorted for byte-stable output.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import SenseInventory, Vocabulary
from .discriminator import DiscriminatorParams
from .errors import PrerequisiteError, ValidationError
from .generator import GeneratorParams

FORMAT = "pungan-checkpoint"
VERSION = 1


def _dump(model_type, vocab: Vocabulary, inventory: SenseInventory, arrays, meta) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model_type": model_type,
        "meta": meta or {},
        "vocab": vocab.tokens,
        "inventory": [[lemma, list(senses)] for lemma, senses in inventory.senses.items()],
        "tensors": {
            name: {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for name, arr in arrays.items()
        },
    }
    return json.dumps(doc, sort_keys=True, allow_nan=False)


def save_checkpoint(path, params, meta: dict | None = None) -> None:
    if isinstance(params, GeneratorParams):
        text = _dump("generator", params.vocab, params.vocab.inventory, params.arrays, meta)
    elif isinstance(params, DiscriminatorParams):
        text = _dump("discriminator", params.vocab, params.inventory, params.arrays, meta)
    else:
        raise TypeError(f"cannot checkpoint {type(params).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def load_checkpoint(path, expect: str | None = None):
    """Return ``(params, meta)``; ``expect`` checks the model type."""
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValidationError(f"{path}: not a pungan checkpoint")
    if doc.get("version") != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    kind = doc["model_type"]
    if expect is not None and kind != expect:
        raise ValidationError(f"{path}: expected a {expect} checkpoint, found {kind}")
    inventory = SenseInventory({lemma: tuple(senses) for lemma, senses in doc["inventory"]})
    vocab = Vocabulary(doc["vocab"], inventory)
    arrays = {
        name: np.array(t["data"], dtype=np.float64).reshape(t["shape"]) for name, t in doc["tensors"].items()
    }
    if kind == "generator":
        params = GeneratorParams(vocab, arrays)
    elif kind == "discriminator":
        params = DiscriminatorParams(vocab, inventory, arrays)
    else:
        raise ValidationError(f"{path}: unknown model type {kind!r}")
    return params, doc["meta"]
