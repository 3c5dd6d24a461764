"""Pretraining and the alternating adversarial loop.

Randomness is drawn from generators seeded by ``(seed, stage, index)``, so
any round can be replayed from a checkpoint of the previous one.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import discriminator as disc_mod
from . import generator as gen_mod
from .checkpoint import save_checkpoint
from .corpus import SenseInventory, SensePair, TaggedSentence, Vocabulary, batch_iter
from .discriminator import DiscriminatorParams
from .errors import InvalidArgument, ValidationError
from .generator import GeneratorParams
from .reward import batch_rewards

log = logging.getLogger(__name__)

# stage tags mixed into the seed sequence
INIT_GEN, INIT_DISC, PRETRAIN_GEN, PRETRAIN_DISC, ROUND, EVAL = range(1, 7)


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    lr: float = 0.001
    K: int = 32
    gen_pretrain_epochs: int = 5
    disc_pretrain_epochs: int = 4
    gen_steps_per_round: int = 1
    disc_steps_per_round: int = 5
    adversarial_rounds: int = 100
    max_len: int = 20
    gen_emb_dim: int = 300
    gen_hidden: int = 128
    disc_emb_dim: int = 300
    disc_hidden: int = 128
    seed: int = 0
    init_scale: float = 0.08
    # per-stage learning rates; None falls back to lr
    pretrain_lr: float | None = None
    disc_lr: float | None = None
    pg_lr: float | None = None
    clip_norm: float | None = None
    reward_baseline: bool = False
    use_unlabeled: bool = True
    use_generated: bool = True
    min_count: int = 1
    checkpoint_every: int = 0
    log_samples: int = 3
    data_dir: str | None = None
    pairs_file: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        for name in ("batch_size", "K", "gen_pretrain_epochs", "disc_pretrain_epochs", "gen_steps_per_round",
                     "adversarial_rounds", "max_len", "gen_emb_dim", "gen_hidden", "disc_emb_dim",
                     "disc_hidden", "min_count"):
            value = getattr(self, name)
            if not _is_int(value) or value < 1:
                raise ValidationError(f"config: {name} must be an integer >= 1, got {value!r}")
        # zero discriminator steps is the frozen-discriminator ablation
        for name in ("disc_steps_per_round", "checkpoint_every", "log_samples"):
            value = getattr(self, name)
            if not _is_int(value) or value < 0:
                raise ValidationError(f"config: {name} must be an integer >= 0, got {value!r}")
        for name in ("lr", "pretrain_lr", "disc_lr", "pg_lr", "clip_norm", "init_scale"):
            value = getattr(self, name)
            if value is not None and not ((_is_int(value) or isinstance(value, float)) and value > 0):
                raise ValidationError(f"config: {name} must be positive, got {value!r}")
        for name in ("reward_baseline", "use_unlabeled", "use_generated"):
            if not isinstance(getattr(self, name), bool):
                raise ValidationError(f"config: {name} must be true or false, got {getattr(self, name)!r}")

    @property
    def gen_pretrain_lr(self) -> float:
        return self.pretrain_lr if self.pretrain_lr is not None else self.lr

    @property
    def disc_train_lr(self) -> float:
        return self.disc_lr if self.disc_lr is not None else self.lr

    @property
    def policy_lr(self) -> float:
        return self.pg_lr if self.pg_lr is not None else self.lr

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("\"'")


def parse_config_text(text: str, path=None) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    fields = {f.name for f in dataclasses.fields(TrainingConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path or 'config'}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValidationError(f"{path or 'config'}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(value)
    return out


def load_config(path, **overrides) -> TrainingConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"), path)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainingConfig(**values)


def dump_config(config: TrainingConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        lines.append(f"{key} = {'none' if value is None else json.dumps(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def _generated_batch(gen: GeneratorParams, pairs: Sequence[SensePair], n: int, rng, max_len: int):
    chosen = [pairs[i] for i in rng.integers(len(pairs), size=n)]
    return gen_mod.sample_batch(gen, chosen, rng, max_len)


def _subset(items: Sequence, n: int, rng) -> list:
    if not items:
        return []
    idx = rng.choice(len(items), size=min(n, len(items)), replace=False)
    return [items[i] for i in idx]


def pretrain_generator(config: TrainingConfig, corpus: Sequence[TaggedSentence], vocab: Vocabulary,
                       params: GeneratorParams | None = None, checkpoint_path=None):
    """MLE pretraining of the forward and backward LMs; returns (params, log)."""
    if not corpus:
        raise InvalidArgument("generator pretraining needs a non-empty sense-labeled corpus")
    if params is None:
        params = gen_mod.init_generator(vocab, config.gen_emb_dim, config.gen_hidden,
                                        rng_for(config.seed, INIT_GEN), config.init_scale)
    records = []
    for epoch in range(1, config.gen_pretrain_epochs + 1):
        losses = []
        for batch in batch_iter(corpus, config.batch_size, np.random.SeedSequence([config.seed, PRETRAIN_GEN, epoch])):
            losses.append(gen_mod.mle_pretrain_step(params, batch, config.gen_pretrain_lr, config.clip_norm))
        records.append({"epoch": epoch, "loss": float(np.mean(losses))})
        log.info("generator epoch %d: loss %.4f", epoch, records[-1]["loss"])
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, {"stage": "pretrain-gen", "epochs": config.gen_pretrain_epochs})
    return params, records


def pretrain_discriminator(config: TrainingConfig, labeled: Sequence[TaggedSentence],
                           unlabeled: Sequence[TaggedSentence], generator: GeneratorParams | None,
                           inventory: SenseInventory, pairs: Sequence[SensePair] = (),
                           params: DiscriminatorParams | None = None, checkpoint_path=None):
    """Three-term pretraining; ``use_unlabeled``/``use_generated`` drop terms."""
    if not labeled:
        raise InvalidArgument("discriminator pretraining needs a non-empty labeled set")
    if config.use_generated and (generator is None or not pairs):
        raise InvalidArgument("generated-class training needs a generator and sense pairs")
    vocab = generator.vocab if generator is not None else None
    if params is None:
        if vocab is None:
            raise InvalidArgument("a vocabulary is required to initialise the discriminator")
        params = disc_mod.init_discriminator(vocab, inventory, config.disc_emb_dim, config.disc_hidden,
                                             rng_for(config.seed, INIT_DISC), config.init_scale)
    records = []
    for epoch in range(1, config.disc_pretrain_epochs + 1):
        rng = rng_for(config.seed, PRETRAIN_DISC, epoch)
        losses = []
        for batch in batch_iter(labeled, config.batch_size, rng):
            unl = _subset(unlabeled, len(batch), rng) if config.use_unlabeled else []
            fake = _generated_batch(generator, pairs, len(batch), rng, config.max_len) if config.use_generated else []
            losses.append(disc_mod.discriminator_train_step(params, batch, unl, fake, config.disc_train_lr,
                                                            config.clip_norm))
        records.append({"epoch": epoch, "loss": float(np.mean(losses))})
        log.info("discriminator epoch %d: loss %.4f", epoch, records[-1]["loss"])
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, {"stage": "pretrain-disc", "epochs": config.disc_pretrain_epochs})
    return params, records


def mean_reward(gen: GeneratorParams, disc: DiscriminatorParams, pairs: Sequence[SensePair], n: int,
                rng: np.random.Generator, max_len: int) -> float:
    """Average ambiguity reward of ``n`` fresh samples, pairs drawn uniformly."""
    traces = _generated_batch(gen, pairs, n, rng, max_len)
    return float(batch_rewards(disc, traces).rewards.mean())


def _truncate_log(path: Path, last_round: int) -> None:
    """Drop records past ``last_round`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    kept = [line for line in path.read_text(encoding="utf-8").splitlines(keepends=True)
            if line.strip() and json.loads(line)["round"] <= last_round]
    path.write_text("".join(kept), encoding="utf-8")


def checkpoint_names(round_index: int) -> tuple[str, str]:
    return f"gen_round{round_index:05d}.json", f"disc_round{round_index:05d}.json"


def adversarial_train(config: TrainingConfig, gen: GeneratorParams, disc: DiscriminatorParams,
                      labeled: Sequence[TaggedSentence], unlabeled: Sequence[TaggedSentence],
                      pairs: Sequence[SensePair], start_round: int = 0, log_path=None, checkpoint_dir=None):
    """Alternate policy-gradient generator steps with discriminator steps.

    Rounds ``start_round + 1 .. adversarial_rounds`` are run. Each round uses
    its own seeded generator, so resuming from the checkpoint written after
    round ``n`` reproduces round ``n + 1`` exactly. Returns
    ``(gen, disc, records)``; the JSONL log holds the same records, and
    wall-clock timings go to a ``.timing.jsonl`` sidecar so the log itself
    stays byte-reproducible.
    """
    if not pairs:
        raise InvalidArgument("adversarial training needs at least one sense pair")
    if config.disc_steps_per_round and not labeled:
        raise InvalidArgument("discriminator steps need labeled sentences")
    log_file = timing_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if start_round else "w"
        if start_round:
            _truncate_log(log_path, start_round)
            _truncate_log(log_path.with_suffix(".timing.jsonl"), start_round)
        log_file = open(log_path, mode, encoding="utf-8")
        timing_file = open(log_path.with_suffix(".timing.jsonl"), mode, encoding="utf-8")
    records = []
    try:
        for r in range(start_round + 1, config.adversarial_rounds + 1):
            started = time.perf_counter()
            rng = rng_for(config.seed, ROUND, r)
            gen_losses, rewards, shown = [], [], []
            for _ in range(config.gen_steps_per_round):
                pair = pairs[rng.integers(len(pairs))]
                traces = gen_mod.sample_batch(gen, [pair] * config.K, rng, config.max_len)
                batch = batch_rewards(disc, traces, pair)
                rewards.extend(batch.rewards.tolist())
                shown.extend(t.text() for t in traces[:config.log_samples])
                gen_losses.append(gen_mod.policy_gradient_step(gen, batch, config.policy_lr,
                                                               config.reward_baseline, config.clip_norm))
            disc_losses = []
            for _ in range(config.disc_steps_per_round):
                lab = _subset(labeled, config.batch_size, rng)
                unl = _subset(unlabeled, config.batch_size, rng) if config.use_unlabeled else []
                fake = _generated_batch(gen, pairs, config.batch_size, rng, config.max_len) if config.use_generated else []
                disc_losses.append(disc_mod.discriminator_train_step(disc, lab, unl, fake, config.disc_train_lr,
                                                                     config.clip_norm))
            rec = {
                "round": r,
                "gen_loss": float(np.mean(gen_losses)),
                "disc_loss": float(np.mean(disc_losses)) if disc_losses else None,
                "reward_mean": float(np.mean(rewards)),
                "reward_min": float(np.min(rewards)),
                "reward_max": float(np.max(rewards)),
                "samples": shown,
            }
            if not all(math.isfinite(v) for v in (rec["gen_loss"], rec["reward_mean"])):
                raise FloatingPointError(f"round {r}: non-finite loss or reward")
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
                timing_file.write(json.dumps({"round": r, "seconds": time.perf_counter() - started}) + "\n")
            if checkpoint_dir is not None and (
                    r == config.adversarial_rounds or (config.checkpoint_every and r % config.checkpoint_every == 0)):
                gname, dname = checkpoint_names(r)
                save_checkpoint(Path(checkpoint_dir) / gname, gen, {"stage": "adversarial", "round": r})
                save_checkpoint(Path(checkpoint_dir) / dname, disc, {"stage": "adversarial", "round": r})
            if r % 50 == 0:
                log.info("round %d: reward %.4f", r, rec["reward_mean"])
    finally:
        if log_file is not None:
            log_file.close()
            timing_file.close()
    return gen, disc, records
