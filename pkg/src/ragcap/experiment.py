"""Experiment matrix: training regimes x datastore variants, over several seeds."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import corpus
from . import datastore as dstore
from . import pipeline as P
from .decoder import checkpoint as ckpt_mod
from .decoder import training as T
from .decoder.generation import DecodeStrategy
from .encoder import EncoderConfig
from .metrics import MetricReport

log = logging.getLogger(__name__)

REGIMES = ("in_domain", "cross_domain", "combined")
VARIANTS = ("train_set", "eval_set", "merged", "external_file")


class ConfigError(ValueError):
    pass


def strict(d: Any, allowed: Sequence[str], where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class DecodeSettings:
    max_new: int = 24
    beam_width: int = 1


@dataclass(frozen=True)
class Settings:
    """Everything below the experiment matrix: encoder, decoder and optimisation."""

    encoder: dict = field(default_factory=lambda: {"dim": 64, "alpha": 0.1})
    decoder: dict = field(default_factory=lambda: {"n_layers": 2, "d_model": 32, "n_heads": 4,
                                                   "d_ff": 64, "max_len": 128, "gate_init": 0.0})
    pretrain: dict = field(default_factory=lambda: {"lr": 3e-3, "epochs": 15, "batch_size": 32})
    train: dict = field(default_factory=lambda: {"lr": 1e-3, "epochs": 15, "batch_size": 32})
    k: int = 4
    refs_per_sample: int = 5
    all_siblings: bool = True
    decode: DecodeSettings = DecodeSettings()

    KEYS = ("encoder", "decoder", "pretrain", "train", "k", "refs_per_sample", "all_siblings", "decode")

    @classmethod
    def from_dict(cls, d: dict) -> "Settings":
        base = cls()
        strict(d.get("encoder", {}), ("dim", "alpha"), "encoder")
        strict(d.get("decoder", {}), ("n_layers", "d_model", "n_heads", "d_ff", "max_len", "gate_init"),
               "decoder")
        for key in ("pretrain", "train"):
            strict(d.get(key, {}), ("lr", "epochs", "batch_size"), key)
        out = cls(
            encoder={**base.encoder, **d.get("encoder", {})},
            decoder={**base.decoder, **d.get("decoder", {})},
            pretrain={**base.pretrain, **d.get("pretrain", {})},
            train={**base.train, **d.get("train", {})},
            k=int(d.get("k", base.k)),
            refs_per_sample=int(d.get("refs_per_sample", base.refs_per_sample)),
            all_siblings=bool(d.get("all_siblings", base.all_siblings)),
            decode=DecodeSettings(**strict(d.get("decode", {}), ("max_new", "beam_width"), "decode")),
        )
        if out.k < 1:
            raise ConfigError(f"k must be >= 1, got {out.k}")
        if not 1 <= out.refs_per_sample <= corpus.N_REFERENCES:
            raise ConfigError("refs_per_sample must lie in 1..5")
        return out

    def encoder_config(self, seed: int) -> EncoderConfig:
        return EncoderConfig(dim=int(self.encoder["dim"]), seed=seed, alpha=float(self.encoder["alpha"]))

    def train_config(self, which: str, seed: int) -> T.TrainConfig:
        d = getattr(self, which)
        return T.TrainConfig(lr=float(d["lr"]), epochs=int(d["epochs"]),
                             batch_size=int(d["batch_size"]), seed=seed)


def train_model(ds: corpus.Dataset, train_domains: Sequence[str], settings: Settings, seed: int,
                base: ckpt_mod.Checkpoint | None = None):
    """Pretrain (or reuse) the frozen base, then fit cross-attention on ``train_domains``.

    Returns ``(checkpoint, train_store, TrainResult)``.
    """
    enc = settings.encoder_config(seed)
    max_len = int(settings.decoder["max_len"])
    if base is None:
        base = pretrained_base(ds, settings, seed)
    records = ds.select("train", train_domains)
    if not records:
        raise ConfigError(f"no training samples for domains {list(train_domains)}")
    store = P.caption_store(ds, records, enc, name="train")
    examples = P.audio_examples(records, store, base.vocab, settings.k, max_len,
                                settings.refs_per_sample, settings.all_siblings)
    dev_records = ds.select("dev", train_domains)
    dev = P.audio_examples(dev_records, store, base.vocab, settings.k, max_len,
                           settings.refs_per_sample, settings.all_siblings) if dev_records else []
    result = T.train(base.params, base.config, examples, settings.train_config("train", seed), dev)
    ckpt = ckpt_mod.Checkpoint(base.config, base.vocab, result.params, enc)
    return ckpt, store, result


def pretrained_base(ds: corpus.Dataset, settings: Settings, seed: int) -> ckpt_mod.Checkpoint:
    """Base LM fitted on text only: train-split captions of every domain."""
    enc = settings.encoder_config(seed)
    dcfg = {k: v for k, v in settings.decoder.items()}
    base = P.new_checkpoint(ds, dcfg, enc, seed)
    records = ds.select("train")
    text_store = P.caption_store(ds, records, enc, name="text")
    examples = P.text_examples(records, text_store, base.vocab, settings.k,
                               base.config.max_len, ds.events)
    res = T.pretrain_base(base.params, base.config, examples, settings.train_config("pretrain", seed))
    log.info("base pretraining final loss %.4f", res.losses[-1])
    return replace(base, params=res.params)


def loss_csv(losses: Sequence[float]) -> str:
    lines = ["epoch,mean_loss"] + [f"{i},{v:.6f}" for i, v in enumerate(losses, 1)]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ matrix

@dataclass(frozen=True)
class ExperimentPlan:
    regime: str
    train_domains: tuple[str, ...]
    eval_domain: str
    datastore_variant: str
    k: int
    seed: int
    external_path: str | None = None

    def __post_init__(self):
        if self.datastore_variant not in VARIANTS:
            raise ConfigError(f"unknown datastore variant {self.datastore_variant!r}")
        if self.datastore_variant == "external_file" and not self.external_path:
            raise ConfigError("datastore variant external_file requires a path")
        if self.k < 1:
            raise ConfigError("k must be >= 1")


@dataclass
class RunRecord:
    plan: ExperimentPlan
    checkpoint_path: str
    checkpoint_sha256: str
    report: MetricReport
    seconds: float
    generations: list[P.Generation]


@dataclass(frozen=True)
class MatrixConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    gen: dict = field(default_factory=lambda: {"samples_per_domain": 200, "overlap": 0.2,
                                               "min_events": 1, "max_events": 4})
    domains: tuple[corpus.DomainSpec, ...] = corpus.DEFAULT_DOMAINS
    eval_domain: str = "nature"
    source_domains: tuple[str, ...] = ()
    regimes: tuple[str, ...] = REGIMES
    variants: tuple[str, ...] = ("train_set", "eval_set", "merged")
    external_datastore: str | None = None
    settings: Settings = Settings()

    KEYS = ("seeds", "corpus", "domains", "eval_domain", "source_domains", "regimes", "variants",
            "external_datastore") + Settings.KEYS

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixConfig":
        strict(d, cls.KEYS, "plan")
        base = cls()
        try:
            domains = tuple(corpus.DomainSpec.from_dict(x) for x in d["domains"]) if "domains" in d \
                else base.domains
        except (KeyError, TypeError, corpus.CorpusError) as exc:
            raise ConfigError(f"domains: {exc}") from None
        gen = {**base.gen, **strict(d.get("corpus", {}),
                                    ("samples_per_domain", "overlap", "min_events", "max_events"),
                                    "corpus")}
        cfg = cls(
            seeds=tuple(int(s) for s in d.get("seeds", base.seeds)),
            gen=gen,
            domains=domains,
            eval_domain=d.get("eval_domain", domains[-1].name),
            source_domains=tuple(d.get("source_domains", ())),
            regimes=tuple(d.get("regimes", base.regimes)),
            variants=tuple(d.get("variants", base.variants)),
            external_datastore=d.get("external_datastore"),
            settings=Settings.from_dict({k: d[k] for k in Settings.KEYS if k in d}),
        )
        names = [x.name for x in cfg.domains]
        if cfg.eval_domain not in names:
            raise ConfigError(f"eval_domain {cfg.eval_domain!r} is not a configured domain")
        for s in cfg.source_domains:
            if s not in names or s == cfg.eval_domain:
                raise ConfigError(f"bad source domain {s!r}")
        for r in cfg.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}")
        for v in cfg.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown datastore variant {v!r}")
        if "external_file" in cfg.variants and not cfg.external_datastore:
            raise ConfigError("variant external_file requires external_datastore")
        if not cfg.seeds:
            raise ConfigError("at least one seed required")
        return cfg

    def gen_config(self, seed: int) -> corpus.GenConfig:
        g = self.gen
        return corpus.GenConfig(seed=seed, samples_per_domain=int(g["samples_per_domain"]),
                                min_events=int(g["min_events"]), max_events=int(g["max_events"]),
                                overlap=float(g["overlap"]))

    def regime_domains(self) -> dict[str, tuple[str, ...]]:
        names = [d.name for d in self.domains]
        others = self.source_domains or tuple(n for n in names if n != self.eval_domain)
        out = {}
        for r in self.regimes:
            if r == "in_domain":
                out[r] = (self.eval_domain,)
            elif r == "cross_domain":
                if others:
                    out[r] = others
            else:
                out[r] = tuple(names)
        return out


def _store_for(variant: str, ds: corpus.Dataset, cfg: MatrixConfig, train_domains, enc,
               cache: dict) -> dstore.Datastore:
    def domain_store(dom: str) -> dstore.Datastore:
        if dom not in cache:
            cache[dom] = P.caption_store(ds, ds.select("train", [dom]), enc, name=dom)
        return cache[dom]

    def union(doms) -> dstore.Datastore:
        doms = list(doms)
        out = domain_store(doms[0])
        for d in doms[1:]:
            out = dstore.merge(out, domain_store(d))
        return out

    if variant == "train_set":
        return union(train_domains)
    if variant == "eval_set":
        return domain_store(cfg.eval_domain)
    if variant == "merged":
        return union([d.name for d in cfg.domains])
    store = dstore.load(cfg.external_datastore)
    if store.encoder_config != enc:
        raise ConfigError("external datastore was built with a different encoder config")
    return store


RESULT_FIELDS = ("seed", "regime", "train_set", "eval_set", "datastore") + MetricReport.METRICS + (
    "pair_count", "checkpoint_sha256")


def _label(variant: str, cfg: MatrixConfig, train_domains) -> str:
    if variant == "train_set":
        return "+".join(train_domains)
    if variant == "eval_set":
        return cfg.eval_domain
    if variant == "merged":
        return "merged"
    return Path(cfg.external_datastore).name


def run_matrix(cfg: MatrixConfig, out_dir: str | Path) -> list[RunRecord]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[RunRecord] = []
    for seed in cfg.seeds:
        sdir = out / f"seed{seed}"
        sdir.mkdir(exist_ok=True)
        ds = corpus.generate(cfg.domains, cfg.gen_config(seed))
        corpus.save_jsonl(ds, sdir / "corpus.jsonl")
        enc = cfg.settings.encoder_config(seed)
        base = pretrained_base(ds, cfg.settings, seed)
        test = ds.select("test", [cfg.eval_domain])
        cache: dict = {}
        for regime, train_domains in cfg.regime_domains().items():
            ckpt, _, result = train_model(ds, train_domains, cfg.settings, seed, base)
            ckpt_path = sdir / f"{regime}.rcpt"
            ckpt_mod.save(ckpt, ckpt_path)
            (sdir / f"{regime}.loss.csv").write_text(loss_csv(result.losses))
            digest = ckpt_mod.file_sha256(ckpt_path)
            for variant in cfg.variants:
                t0 = time.perf_counter()
                store = _store_for(variant, ds, cfg, train_domains, enc, cache)
                plan = ExperimentPlan(regime, tuple(train_domains), cfg.eval_domain, variant,
                                      cfg.settings.k, seed, cfg.external_datastore)
                loaded = ckpt_mod.load(ckpt_path)
                gens = P.caption_records(loaded, test, store, cfg.settings.k,
                                         cfg.settings.decode.max_new,
                                         DecodeStrategy(cfg.settings.decode.beam_width))
                report = P.score(test, gens)
                stem = sdir / f"{regime}__{variant}"
                Path(f"{stem}.report.csv").write_text(report.to_csv())
                write_generations(gens, f"{stem}.generations.jsonl")
                records.append(RunRecord(plan, str(ckpt_path), digest, report,
                                         time.perf_counter() - t0, gens))
                log.info("seed %d %s/%s: %s", seed, regime, variant, report.as_dict())
    (out / "results.csv").write_text(results_csv(records, cfg))
    (out / "table.csv").write_text(summary_csv(records, cfg))
    with open(out / "runs.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps({"plan": asdict(r.plan), "checkpoint": r.checkpoint_path,
                                 "checkpoint_sha256": r.checkpoint_sha256,
                                 "seconds": round(r.seconds, 3), **r.report.as_dict()}) + "\n")
    return records


def write_generations(gens: Sequence[P.Generation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in gens:
            fh.write(json.dumps(g.as_dict(), ensure_ascii=False) + "\n")


def _row(r: RunRecord, cfg: MatrixConfig) -> dict:
    return {"seed": r.plan.seed, "regime": r.plan.regime, "train_set": "+".join(r.plan.train_domains),
            "eval_set": r.plan.eval_domain,
            "datastore": _label(r.plan.datastore_variant, cfg, r.plan.train_domains),
            **{m: f"{getattr(r.report, m):.4f}" for m in MetricReport.METRICS},
            "pair_count": r.report.pair_count, "checkpoint_sha256": r.checkpoint_sha256}


def results_csv(records: Sequence[RunRecord], cfg: MatrixConfig) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(_row(r, cfg))
    return buf.getvalue()


def summary_rows(records: Sequence[RunRecord], cfg: MatrixConfig) -> list[dict]:
    """Seed-averaged metrics, one row per (regime, training set, datastore)."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        key = (r.plan.regime, "+".join(r.plan.train_domains),
               _label(r.plan.datastore_variant, cfg, r.plan.train_domains))
        groups.setdefault(key, []).append(r)
    rows = []
    for (regime, train_set, label), rs in groups.items():
        row = {"regime": regime, "train_set": train_set, "datastore": label,
               "seeds": len({r.plan.seed for r in rs})}
        for m in MetricReport.METRICS:
            row[m] = float(np.mean([getattr(r.report, m) for r in rs]))
        rows.append(row)
    return rows


def summary_csv(records: Sequence[RunRecord], cfg: MatrixConfig) -> str:
    buf = io.StringIO()
    fields = ("regime", "train_set", "datastore", "seeds") + MetricReport.METRICS
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in summary_rows(records, cfg):
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def format_table(records: Sequence[RunRecord], cfg: MatrixConfig) -> str:
    rows = summary_rows(records, cfg)
    head = f"{'training set':<16}{'datastore':<16}" + "".join(f"{m:>9}" for m in MetricReport.METRICS)
    lines = [f"evaluated on {cfg.eval_domain} (test split), mean over {len(cfg.seeds)} seed(s)",
             head, "-" * len(head)]
    for row in rows:
        lines.append(f"{row['train_set']:<16}{row['datastore']:<16}"
                     + "".join(f"{row[m]:>9.4f}" for m in MetricReport.METRICS))
    return "\n".join(lines)
