"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 data-format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus
from . import datastore as dstore
from . import experiment as X
from . import pipeline as P
from .decoder import checkpoint as ckpt_mod
from .decoder import model as M
from .decoder import training as T
from .decoder.generation import DecodeStrategy
from .decoder.training import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("ragcap")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must contain a JSON object")
    return cfg


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _load_dataset(path: str) -> corpus.Dataset:
    try:
        return corpus.load_jsonl(_need_file(path, "dataset"))
    except corpus.CorpusError as exc:
        raise CliError(f"{path}: {exc}", EXIT_FORMAT) from None


def _load_store(path: str) -> dstore.Datastore:
    try:
        return dstore.load(_need_file(path, "datastore"))
    except dstore.DatastoreFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_FORMAT) from None


def _load_ckpt(path: str) -> ckpt_mod.Checkpoint:
    try:
        return ckpt_mod.load(_need_file(path, "checkpoint"))
    except ckpt_mod.CheckpointFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_FORMAT) from None


def cmd_gen_corpus(args) -> None:
    cfg = X.strict(_read_config(args.config),
                   ("seed", "samples_per_domain", "min_events", "max_events", "overlap", "domains"),
                   "corpus config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    # every failure here traces back to the config, not to a data file
    try:
        domains = tuple(corpus.DomainSpec.from_dict(d) for d in cfg.pop("domains")) \
            if "domains" in cfg else corpus.DEFAULT_DOMAINS
        ds = corpus.generate(domains, corpus.GenConfig(**cfg))
    except (corpus.CorpusError, KeyError, TypeError) as exc:
        raise CliError(f"corpus config: {exc}") from None
    corpus.save_jsonl(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")


def cmd_build_datastore(args) -> None:
    cfg = X.strict(_read_config(args.config), ("dim", "alpha", "seed"), "encoder config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    enc = X.Settings.from_dict({"encoder": {k: v for k, v in cfg.items() if k != "seed"}}) \
        .encoder_config(int(cfg.get("seed", 0)))
    ds = _load_dataset(args.dataset)
    records = ds.select(args.split, args.domains)
    if not records:
        raise CliError(f"no samples in split {args.split!r} for domains {args.domains}")
    store = P.caption_store(ds, records, enc, name=Path(args.out).stem, source=args.source)
    for extra in args.merge or ():
        other = _load_store(extra)
        if other.encoder_config != enc:
            raise CliError(f"cannot merge {extra}: built with a different encoder config")
        store = dstore.merge(store, other)
    dstore.save(store, args.out)
    print(f"wrote {len(store)} entries to {args.out}")


def cmd_train(args) -> None:
    cfg = X.strict(_read_config(args.config), X.Settings.KEYS + ("domains", "seed"), "train config")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    settings = X.Settings.from_dict({k: v for k, v in cfg.items() if k in X.Settings.KEYS})
    ds = _load_dataset(args.dataset)
    store = _load_store(args.datastore)
    enc = store.encoder_config
    # the encoder is fixed by the datastore; the seed drives pretraining and training
    settings = replace(settings, encoder={"dim": enc.dim, "alpha": enc.alpha})
    domains = cfg.get("domains") or ds.domains
    records = ds.select("train", domains)
    if not records:
        raise CliError(f"no training samples for domains {domains}")
    base = X.pretrained_base(ds, settings, seed)
    base = replace(base, encoder_config=enc)
    max_len = int(settings.decoder["max_len"])
    examples = P.audio_examples(records, store, base.vocab, settings.k, max_len,
                                settings.refs_per_sample, settings.all_siblings)
    dev_records = ds.select("dev", domains)
    dev = P.audio_examples(dev_records, store, base.vocab, settings.k, max_len,
                           settings.refs_per_sample, settings.all_siblings) if dev_records else []
    result = T.train(base.params, base.config, examples, settings.train_config("train", seed), dev)
    ckpt = replace(base, params=result.params)
    ckpt_mod.save(ckpt, args.out)
    loss_path = Path(args.loss_csv or f"{args.out}.loss.csv")
    loss_path.write_text(X.loss_csv(result.losses))
    if result.dev_losses:
        dev_path = loss_path.with_name(loss_path.stem + ".dev.csv")
        dev_path.write_text(X.loss_csv(result.dev_losses).replace("mean_loss", "dev_loss", 1))
    print(f"final loss {result.losses[-1]:.4f}; trainable fraction "
          f"{M.trainable_fraction(ckpt.params):.4f}; wrote {args.out}")


def cmd_evaluate(args) -> None:
    if args.k < 1:
        raise CliError(f"k must be >= 1, got {args.k}")
    cfg = X.strict(_read_config(args.config), ("max_new", "beam_width"), "decode config")
    ckpt = _load_ckpt(args.checkpoint)
    ds = _load_dataset(args.dataset)
    store = _load_store(args.datastore)
    if store.encoder_config != ckpt.encoder_config:
        raise CliError("datastore encoder config does not match the checkpoint")
    records = ds.select(args.split, args.domains)
    if len(records) < 2:
        raise CliError("need at least 2 evaluation samples")
    gens = P.caption_records(ckpt, records, store, args.k, int(cfg.get("max_new", 24)),
                             DecodeStrategy(int(cfg.get("beam_width", 1))))
    report = P.score(records, gens)
    Path(args.out).write_text(report.to_csv())
    X.write_generations(gens, args.generations or f"{args.out}.generations.jsonl")
    print(report.table())


def cmd_experiment(args) -> None:
    cfg = X.MatrixConfig.from_dict(_read_config(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    records = X.run_matrix(cfg, args.out)
    print(X.format_table(records, cfg))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ragcap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help="output path")
        p.set_defaults(fn=fn)
        return p

    add("gen-corpus", cmd_gen_corpus, "generate a synthetic two-domain corpus")

    p = add("build-datastore", cmd_build_datastore, "embed captions into a datastore file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="train", choices=corpus.SPLITS)
    p.add_argument("--domains", nargs="*", help="restrict to these domains")
    p.add_argument("--source", default="trainset", help="source tag stored with each entry")
    p.add_argument("--merge", action="append", help="merge another datastore file into the output")

    p = add("train", cmd_train, "pretrain the base LM and train cross-attention")
    p.add_argument("--dataset", required=True)
    p.add_argument("--datastore", required=True)
    p.add_argument("--loss-csv")

    p = add("evaluate", cmd_evaluate, "caption a split and score it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--datastore", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--split", default="test", choices=corpus.SPLITS)
    p.add_argument("--domains", nargs="*")
    p.add_argument("--generations", help="generations JSONL path")

    add("experiment", cmd_experiment, "run the regime x datastore matrix")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (corpus.CorpusError, dstore.DatastoreFormatError, ckpt_mod.CheckpointFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (X.ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
