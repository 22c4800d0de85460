"""Synthetic multi-domain captioning corpora and their JSON Lines format."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .encoder import AudioSample, EncoderError, validate_event

N_REFERENCES = 5
SPLITS = ("train", "dev", "test")
SLOT = "{event}"
_RECORD_KEYS = {"id", "domain", "events", "captions", "split"}


class CorpusError(ValueError):
    pass


class CorpusFormatError(CorpusError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class DomainSpec:
    name: str
    events: tuple[str, ...]
    templates: tuple[str, ...]
    # Events this domain lends to other domains, in priority order.
    overlap: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "templates", tuple(self.templates))
        object.__setattr__(self, "overlap", tuple(self.overlap) or self.events)
        if not self.name:
            raise CorpusError("domain name must be non-empty")
        if len(self.events) < 5:
            raise CorpusError(f"domain {self.name!r} needs >= 5 events")
        if len(set(self.events)) != len(self.events):
            raise CorpusError(f"domain {self.name!r} has duplicate events")
        try:
            for ev in self.events:
                validate_event(ev)
        except EncoderError as exc:
            raise CorpusError(f"domain {self.name!r}: {exc}") from None
        if len(self.templates) < 2:
            raise CorpusError(f"domain {self.name!r} needs >= 2 templates")
        for t in self.templates:
            if SLOT not in t:
                raise CorpusError(f"template without {SLOT} slot: {t!r}")
        stray = set(self.overlap) - set(self.events)
        if stray:
            raise CorpusError(f"overlap events not in domain {self.name!r}: {sorted(stray)}")

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        unknown = set(d) - {"name", "events", "templates", "overlap"}
        if unknown:
            raise CorpusError(f"unknown domain keys: {sorted(unknown)}")
        return cls(d["name"], tuple(d["events"]), tuple(d["templates"]), tuple(d.get("overlap", ())))

    def to_dict(self) -> dict:
        return {"name": self.name, "events": list(self.events),
                "templates": list(self.templates), "overlap": list(self.overlap)}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    samples_per_domain: int = 100
    min_events: int = 1
    max_events: int = 4
    overlap: float = 0.2
    # Raise if the compositionality / novelty hooks do not hold.
    check_hooks: bool = True

    def __post_init__(self):
        if self.samples_per_domain < 1:
            raise CorpusError("samples_per_domain must be >= 1")
        if not 1 <= self.min_events <= self.max_events:
            raise CorpusError("need 1 <= min_events <= max_events")
        if not 0.0 <= self.overlap <= 1.0:
            raise CorpusError("overlap must lie in [0, 1]")


@dataclass(frozen=True)
class Record:
    sample: AudioSample
    captions: tuple[str, ...]
    split: str

    def __post_init__(self):
        object.__setattr__(self, "captions", tuple(self.captions))
        if len(self.captions) != N_REFERENCES:
            raise CorpusError(
                f"sample {self.sample.id!r} has {len(self.captions)} captions, expected {N_REFERENCES}")
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")

    @property
    def id(self) -> str:
        return self.sample.id

    @property
    def domain(self) -> str:
        return self.sample.domain


@dataclass
class Dataset:
    records: list[Record] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate sample ids")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def select(self, split: str | None = None, domains: Iterable[str] | None = None) -> list[Record]:
        doms = None if domains is None else set(domains)
        return [r for r in self.records
                if (split is None or r.split == split) and (doms is None or r.domain in doms)]

    def split_ids(self, split: str) -> set[str]:
        return {r.id for r in self.records if r.split == split}

    @property
    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.records})

    @property
    def events(self) -> frozenset[str]:
        return frozenset(ev for r in self.records for ev in r.sample.events)

    def captions(self) -> list[str]:
        return [c for r in self.records for c in r.captions]


def _vocabulary(domain: DomainSpec, domains: Sequence[DomainSpec], overlap: float) -> list[str]:
    vocab = list(domain.events)
    for other in domains:
        if other.name == domain.name:
            continue
        m = int(round(overlap * len(other.events)))
        for ev in other.overlap[:m]:
            if ev not in vocab:
                vocab.append(ev)
    return vocab


def render_captions(events: Sequence[str], templates: Sequence[str],
                    rng: np.random.Generator, n: int = N_REFERENCES) -> list[str]:
    """Pick ``n`` distinct captions from every (template, event order) rendering."""
    candidates = []
    seen = set()
    for perm in itertools.permutations(events):
        desc = " and ".join(perm)
        for t in templates:
            text = t.replace(SLOT, desc)
            if text not in seen:
                seen.add(text)
                candidates.append(text)
    if len(candidates) < n:
        raise CorpusError(f"cannot render {n} distinct captions for events {list(events)}")
    order = rng.permutation(len(candidates))[:n]
    return [candidates[i] for i in order]


def _split_labels(n: int, rng: np.random.Generator) -> list[str]:
    n_train = int(round(0.7 * n))
    n_dev = int(round(0.15 * n))
    labels = ["train"] * n_train + ["dev"] * n_dev + ["test"] * (n - n_train - n_dev)
    out = [""] * n
    for slot, idx in enumerate(rng.permutation(n)):
        out[idx] = labels[slot]
    return out


def generate(domains: Sequence[DomainSpec], cfg: GenConfig) -> Dataset:
    if not domains:
        raise CorpusError("need at least one domain")
    names = [d.name for d in domains]
    if len(set(names)) != len(names):
        raise CorpusError("duplicate domain names")
    rng = np.random.default_rng(cfg.seed)
    records: list[Record] = []
    for dom in domains:
        vocab = _vocabulary(dom, domains, cfg.overlap)
        hi = min(cfg.max_events, len(vocab))
        if cfg.min_events > hi:
            raise CorpusError(f"domain {dom.name!r} has too few events for min_events")
        labels = _split_labels(cfg.samples_per_domain, rng)
        for i in range(cfg.samples_per_domain):
            n = int(rng.integers(cfg.min_events, hi + 1))
            events = [vocab[j] for j in rng.choice(len(vocab), size=n, replace=False)]
            caps = render_captions(events, dom.templates, rng)
            sample = AudioSample(f"{dom.name}-{i:04d}", tuple(events), dom.name)
            records.append(Record(sample, tuple(caps), labels[i]))
    ds = Dataset(records)
    if cfg.check_hooks:
        _check_hooks(ds, cfg)
    return ds


def novel_event_fraction(ds: Dataset, train_domain: str, eval_domain: str) -> float:
    """Fraction of distinct eval-domain test events absent from train-domain training data."""
    seen = {ev for r in ds.select("train", [train_domain]) for ev in r.sample.events}
    test = {ev for r in ds.select("test", [eval_domain]) for ev in r.sample.events}
    if not test:
        return 0.0
    return len(test - seen) / len(test)


def _check_hooks(ds: Dataset, cfg: GenConfig) -> None:
    if cfg.max_events >= 2:
        for split in SPLITS:
            rows = ds.select(split)
            if rows and not any(len(r.sample.events) >= 2 for r in rows):
                raise CorpusError(f"no multi-event sample in split {split!r}")
    if cfg.overlap <= 0.2:
        for a, b in itertools.permutations(ds.domains, 2):
            frac = novel_event_fraction(ds, a, b)
            if frac < 0.5:
                raise CorpusError(
                    f"only {frac:.2f} of {b!r} test events are novel w.r.t. {a!r} training data")


def record_to_json(rec: Record) -> dict:
    return {"id": rec.id, "domain": rec.domain, "events": list(rec.sample.events),
            "captions": list(rec.captions), "split": rec.split}


def record_from_json(obj: object) -> Record:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object")
    keys = set(obj)
    if keys - _RECORD_KEYS:
        raise CorpusError(f"unknown fields {sorted(keys - _RECORD_KEYS)}")
    if _RECORD_KEYS - keys:
        raise CorpusError(f"missing fields {sorted(_RECORD_KEYS - keys)}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise CorpusError("id must be a non-empty string")
    if not isinstance(obj["events"], list) or not obj["events"]:
        raise CorpusError("events must be a non-empty list")
    if not isinstance(obj["captions"], list) or not all(isinstance(c, str) and c.strip() for c in obj["captions"]):
        raise CorpusError("captions must be a list of non-empty strings")
    try:
        sample = AudioSample(obj["id"], tuple(obj["events"]), str(obj["domain"]))
    except (EncoderError, TypeError) as exc:
        raise CorpusError(str(exc)) from None
    return Record(sample, tuple(obj["captions"]), obj["split"])


def save_jsonl(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in ds:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")


def load_jsonl(path: str | Path) -> Dataset:
    records = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = record_from_json(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(lineno, f"malformed JSON: {exc.msg}") from None
            except CorpusError as exc:
                raise CorpusFormatError(lineno, str(exc)) from None
            if rec.id in ids:
                raise CorpusFormatError(lineno, f"duplicate id {rec.id!r}")
            ids.add(rec.id)
            records.append(rec)
    return Dataset(records)


CITY = DomainSpec(
    name="city",
    events=("car_horn", "siren", "engine_idle", "bus_brake", "footsteps", "door_slam",
            "crowd_chatter", "jackhammer", "bicycle_bell", "train_horn", "traffic_hum",
            "construction_drill", "street_music", "car_alarm", "skateboard_roll"),
    templates=(
        "{event} on a busy city street",
        "a city recording of {event}",
        "{event} can be heard downtown near traffic",
        "urban noise with {event}",
        "someone records {event} outside an office building",
        "{event} echoes between tall buildings",
        "in the city {event} is audible",
        "a street scene with {event} nearby",
    ),
)

NATURE = DomainSpec(
    name="nature",
    events=("bird_chirp", "frog_croak", "stream_flow", "wind_gust", "rain_patter",
            "thunder_rumble", "leaves_rustle", "owl_hoot", "cricket_chirp", "wolf_howl",
            "waterfall_roar", "woodpecker_tap", "bee_buzz", "twig_snap", "waves_crash"),
    templates=(
        "{event} in a quiet forest",
        "a nature recording of {event}",
        "{event} can be heard outdoors in the wild",
        "peaceful wilderness with {event}",
        "{event} near a calm lake at dawn",
        "in the woods {event} is audible",
        "a field recording where {event} fills the air",
        "{event} far from any town",
    ),
)

DEFAULT_DOMAINS = (CITY, NATURE)
