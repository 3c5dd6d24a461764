"""Command-line driver: prepare-data, train, generate, evaluate.

Exit codes: 0 success, 2 usage error, 3 invalid input data, 4 missing
prerequisite (checkpoint or prepared dataset), 5 any other runtime failure.
Log verbosity comes from ``PUNGAN_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as corpus_mod
from . import generator as gen_mod
from . import trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (DuplicateError, InvalidArgument, ParseError, PrerequisiteError, UndefinedMetric,
                     UnknownLemmaError, ValidationError)
from .evalmetrics import distinct_n, evaluate_run, unusualness, MetricReport

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PREREQUISITE, EXIT_RUNTIME = 0, 2, 3, 4, 5
MODES = ("pretrain-gen", "pretrain-disc", "gan", "gan-frozen-disc")

log = logging.getLogger("pungan")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command, config: dict, inputs, artifacts, seed) -> None:
    doc = {
        "tool": "pungan",
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256(p) for p in inputs},
        "artifacts": {name: {"path": str(p), "sha256": sha256(p)} for name, p in artifacts.items() if Path(p).exists()},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# prepare-data


def cmd_prepare_data(args) -> int:
    max_len = args.max_len or corpus_mod.DEFAULT_MAX_LEN
    inventory = corpus_mod.load_sense_inventory(args.inventory)
    labeled = corpus_mod.load_tagged_corpus(args.labeled, inventory, max_len)
    missing = [s for s in labeled if not s.labeled]
    if missing:
        raise ValidationError(f"{args.labeled}: {len(missing)} records lack a sense label")
    unlabeled = corpus_mod.load_tagged_corpus(args.unlabeled, inventory, max_len) if args.unlabeled else []
    unlabeled = [corpus_mod.TaggedSentence.make(s.surface_tokens(), s.target, s.lemma) for s in unlabeled]
    pairs = corpus_mod.load_sense_pairs(args.pairs, inventory) if args.pairs else inventory.pairs()
    vocab = corpus_mod.build_vocabulary([labeled, unlabeled], inventory, args.min_count)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory.save(out / "inventory.tsv")
    corpus_mod.save_tagged_corpus(out / "labeled.jsonl", labeled)
    corpus_mod.save_tagged_corpus(out / "unlabeled.jsonl", unlabeled)
    corpus_mod.save_sense_pairs(out / "pairs.jsonl", pairs)
    vocab.save(out / "vocab.txt")
    inputs = [p for p in (args.inventory, args.labeled, args.unlabeled, args.pairs) if p]
    artifacts = {name: out / name for name in ("inventory.tsv", "labeled.jsonl", "unlabeled.jsonl", "pairs.jsonl",
                                                "vocab.txt")}
    write_manifest(out / "manifest.json", "prepare-data", {"min_count": args.min_count, "max_len": max_len},
                   inputs, artifacts, None)
    stats = {
        "lemmas": len(inventory),
        "senses": sum(inventory.k(l) for l in inventory.lemmas),
        "labeled": len(labeled),
        "unlabeled": len(unlabeled),
        "pairs": len(pairs),
        "vocab": len(vocab),
    }
    for key, value in stats.items():
        print(f"{key}\t{value}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


class _Data:
    def __init__(self, data_dir):
        d = Path(data_dir)
        needed = ["inventory.tsv", "labeled.jsonl", "vocab.txt"]
        for name in needed:
            if not (d / name).exists():
                raise PrerequisiteError(f"prepared dataset incomplete: {d / name} missing (run prepare-data)")
        self.dir = d
        self.inventory = corpus_mod.load_sense_inventory(d / "inventory.tsv")
        self.labeled = corpus_mod.load_tagged_corpus(d / "labeled.jsonl", self.inventory, None)
        unl = d / "unlabeled.jsonl"
        self.unlabeled = corpus_mod.load_tagged_corpus(unl, self.inventory, None) if unl.exists() else []
        self.vocab = corpus_mod.Vocabulary.load(d / "vocab.txt", self.inventory)
        self.files = [d / n for n in ("inventory.tsv", "labeled.jsonl", "unlabeled.jsonl", "vocab.txt", "pairs.jsonl")
                      if (d / n).exists()]

    def pairs(self, pairs_file=None):
        path = Path(pairs_file) if pairs_file else self.dir / "pairs.jsonl"
        if path.exists():
            pairs = corpus_mod.load_sense_pairs(path, self.inventory)
        else:
            pairs = self.inventory.pairs()
        return pairs, ([path] if path.exists() else [])


def _load_train_config(args) -> trainer.TrainingConfig:
    """Config file values, with relative paths taken from the file's directory, then CLI overrides."""
    overrides = {"seed": args.seed, "out_dir": args.out_dir, "data_dir": args.data_dir}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not args.config:
        return trainer.TrainingConfig(**overrides)
    config = trainer.load_config(args.config)
    base = Path(args.config).parent
    paths = {key: str(base / value) for key in ("data_dir", "out_dir", "pairs_file")
             if (value := getattr(config, key)) and not Path(value).is_absolute()}
    return config.replace(**{**paths, **overrides})


def cmd_train(args) -> int:
    config = _load_train_config(args)
    if not config.data_dir:
        raise PrerequisiteError("no prepared dataset: set data_dir in the config or pass --data-dir")
    if not config.out_dir:
        raise InvalidArgument("no output directory: set out_dir in the config or pass --out-dir")
    out = Path(config.out_dir)
    ckpt_dir, log_dir = out / "checkpoints", out / "logs"
    gen_path, disc_path = ckpt_dir / "gen_pretrain.json", ckpt_dir / "disc_pretrain.json"
    data = _Data(config.data_dir)
    inputs = list(data.files)
    artifacts = {}
    mode = args.mode

    if mode in ("gan", "gan-frozen-disc", "pretrain-disc") and not gen_path.exists():
        raise PrerequisiteError(f"{mode} needs a pretrained generator at {gen_path} (run --mode pretrain-gen)")
    if mode in ("gan", "gan-frozen-disc") and not disc_path.exists():
        raise PrerequisiteError(f"{mode} needs a pretrained discriminator at {disc_path} (run --mode pretrain-disc)")

    if mode == "pretrain-gen":
        _, records = trainer.pretrain_generator(config, data.labeled, data.vocab, checkpoint_path=gen_path)
        _write_jsonl(log_dir / "pretrain-gen.jsonl", records)
        artifacts = {"generator": gen_path, "log": log_dir / "pretrain-gen.jsonl"}
    elif mode == "pretrain-disc":
        gen, _ = load_checkpoint(gen_path, "generator")
        pairs, pair_files = data.pairs(config.pairs_file)
        inputs += pair_files + [gen_path]
        _, records = trainer.pretrain_discriminator(config, data.labeled, data.unlabeled, gen, data.inventory, pairs,
                                                    checkpoint_path=disc_path)
        _write_jsonl(log_dir / "pretrain-disc.jsonl", records)
        artifacts = {"discriminator": disc_path, "log": log_dir / "pretrain-disc.jsonl"}
    else:
        if mode == "gan-frozen-disc":
            config = config.replace(disc_steps_per_round=0)
        gen, _ = load_checkpoint(gen_path, "generator")
        disc, _ = load_checkpoint(disc_path, "discriminator")
        start = 0
        run_dir = ckpt_dir / mode
        if args.resume_round:
            start = args.resume_round
            gname, dname = trainer.checkpoint_names(start)
            gen, _ = load_checkpoint(run_dir / gname, "generator")
            disc, _ = load_checkpoint(run_dir / dname, "discriminator")
        pairs, pair_files = data.pairs(config.pairs_file)
        inputs += pair_files + [gen_path, disc_path]
        log_path = log_dir / f"{mode}.jsonl"
        trainer.adversarial_train(config, gen, disc, data.labeled, data.unlabeled, pairs, start_round=start,
                                  log_path=log_path, checkpoint_dir=run_dir)
        gname, dname = trainer.checkpoint_names(config.adversarial_rounds)
        artifacts = {"generator": run_dir / gname, "discriminator": run_dir / dname, "log": log_path}
    manifest = out / "manifests" / f"{mode}.json"
    write_manifest(manifest, f"train --mode {mode}", config.to_dict(), inputs, artifacts, config.seed)
    print(f"mode\t{mode}")
    for name, path in artifacts.items():
        print(f"{name}\t{path}")
    return EXIT_OK


def _write_jsonl(path, records) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# generate / evaluate


def _max_len(args) -> int:
    if args.max_len:
        return args.max_len
    if getattr(args, "config", None):
        return trainer.load_config(args.config).max_len
    return corpus_mod.DEFAULT_MAX_LEN


def cmd_generate(args) -> int:
    gen, _ = load_checkpoint(args.checkpoint, "generator")
    pairs = corpus_mod.load_sense_pairs(args.pairs, gen.vocab.inventory)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 8]))
    if args.count < 0:
        raise InvalidArgument("--count must be non-negative")
    chosen = [p for p in pairs for _ in range(args.count)]
    traces = gen_mod.sample_batch(gen, chosen, rng, _max_len(args), greedy=args.decode == "greedy") if chosen else []
    lines = [f"{t.pair.lemma}\t{t.pair.s1}\t{t.pair.s2}\t{t.logprob:.6f}\t{t.text()}" for t in traces]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    gen, _ = load_checkpoint(args.checkpoint, "generator")
    inventory = gen.vocab.inventory
    disc = load_checkpoint(args.disc, "discriminator")[0] if args.disc else None
    scoring = load_checkpoint(args.scoring_lm, "generator")[0] if args.scoring_lm else None
    pairs = corpus_mod.load_sense_pairs(args.pairs, inventory)
    training = corpus_mod.load_tagged_corpus(args.training_sample, inventory, None)
    if args.self_compare:
        lm = scoring if scoring is not None else gen
        try:
            d2 = distinct_n(training, 2)
        except UndefinedMetric:
            d2 = 0.0
        report = MetricReport(unusualness(lm, training, training), distinct_n(training, 1), d2, len(training))
    else:
        report = evaluate_run(gen, disc, pairs, training, args.count, args.seed, _max_len(args), args.decode,
                              scoring_lm=scoring)
    text = report.table() + "\n" if args.table else report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pungan", description="Adversarial dual-sense pun generation")
    ap.add_argument("--version", action="version", version=f"pungan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="validate corpora and build the vocabulary")
    p.add_argument("--inventory", required=True)
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled")
    p.add_argument("--pairs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="pretraining or adversarial training")
    p.add_argument("--config")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--data-dir")
    p.add_argument("--resume-round", type=int, default=0, help="continue a gan run from this round's checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode sentences for sense pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--count", type=int, default=1, help="sentences per pair")
    p.add_argument("--decode", choices=("sample", "greedy"), default="sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="unusualness and distinct-n report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--training-sample", required=True)
    p.add_argument("--disc")
    p.add_argument("--scoring-lm", help="frozen generator checkpoint used for unusualness")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--decode", choices=("sample", "greedy"), default="sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int)
    p.add_argument("--config")
    p.add_argument("--self-compare", action="store_true", help="score the training sample against itself")
    p.add_argument("--table", action="store_true", help="print a text table instead of JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PUNGAN_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except (ParseError, DuplicateError, ValidationError, UnknownLemmaError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except Exception as exc:  # noqa: BLE001 - top-level driver
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
