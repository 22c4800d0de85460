"""Glue between corpus, encoder, datastore, prompting, decoder and metrics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import datastore as dstore
from .corpus import Dataset, Record
from .decoder import checkpoint as ckpt_mod
from .decoder import model as M
from .decoder.generation import GREEDY, DecodeStrategy, generate
from .decoder.training import Example, encode_example
from .decoder.vocab import Vocabulary, build_vocab
from .encoder import EncoderConfig, audio_hidden_states, embed_text
from .metrics import EvalPair, MetricReport, evaluate_corpus
from .prompting import PREFIX, SUFFIX, RetrievalConfig, build_prompt, retrieve_and_prompt, sibling_exclusion


def caption_store(ds: Dataset, records: Sequence[Record], config: EncoderConfig,
                  name: str, source: str = "trainset") -> dstore.Datastore:
    """Datastore of every reference caption of ``records``."""
    caps = [(c, source) for r in records for c in r.captions]
    return dstore.build(caps, config, events=ds.events, name=name)


def make_vocab(ds: Dataset, min_count: int = 1) -> Vocabulary:
    return build_vocab(ds.captions(), min_count, reserved=[PREFIX + SUFFIX, ",", "."])


def audio_examples(records: Sequence[Record], store: dstore.Datastore, vocab: Vocabulary,
                   k: int, max_len: int, refs_per_sample: int = 5,
                   all_siblings: bool = True) -> list[Example]:
    """Training sequences conditioned on audio, with the audio's own captions hidden."""
    cfg = RetrievalConfig(k)
    out = []
    for r in records:
        hidden = audio_hidden_states(r.sample, store.encoder_config)
        targets = r.captions[:refs_per_sample]
        if all_siblings:
            prompt = retrieve_and_prompt(r.sample, store, cfg, sibling_exclusion(store, r.captions))
            out += [encode_example(prompt, t, vocab, max_len, hidden) for t in targets]
        else:
            for t in targets:
                excl = sibling_exclusion(store, r.captions, all_siblings=False, target=t)
                prompt = retrieve_and_prompt(r.sample, store, cfg, excl)
                out.append(encode_example(prompt, t, vocab, max_len, hidden))
    return out


def text_examples(records: Sequence[Record], store: dstore.Datastore, vocab: Vocabulary,
                  k: int, max_len: int, events: Iterable[str] = ()) -> list[Example]:
    """Text-only sequences for base-LM pretraining: each caption retrieves its neighbours."""
    known = frozenset(events)
    out = []
    for r in records:
        excl = sibling_exclusion(store, r.captions)
        for c in r.captions:
            hits = dstore.query_topk(store, embed_text(c, store.encoder_config, known), k, excl)
            prompt = build_prompt([h.text for h in hits], [h.entry_id for h in hits])
            out.append(encode_example(prompt, c, vocab, max_len))
    return out


@dataclass
class Generation:
    id: str
    retrieved: list[str]
    prompt: str
    output: str

    def as_dict(self) -> dict:
        return {"id": self.id, "retrieved": self.retrieved, "prompt": self.prompt, "output": self.output}


def caption_records(ckpt: ckpt_mod.Checkpoint, records: Sequence[Record], store: dstore.Datastore,
                    k: int, max_new: int = 24, strategy: DecodeStrategy = GREEDY) -> list[Generation]:
    """Retrieve (no exclusions), prompt and decode every record; parameters are read only."""
    if store.encoder_config != ckpt.encoder_config:
        raise dstore.DatastoreError("datastore encoder config differs from the checkpoint's")
    cfg = RetrievalConfig(k)
    gens = []
    for r in records:
        prompt = retrieve_and_prompt(r.sample, store, cfg)
        hidden = audio_hidden_states(r.sample, ckpt.encoder_config)
        text = generate(ckpt.params, ckpt.config, ckpt.vocab, prompt, hidden, max_new, strategy)
        gens.append(Generation(r.id, list(prompt.retrieved_ids), prompt.text, text))
    return gens


def score(records: Sequence[Record], gens: Sequence[Generation]) -> MetricReport:
    pairs = [EvalPair.from_text(g.output, r.captions) for r, g in zip(records, gens)]
    return evaluate_corpus(pairs)


def new_checkpoint(ds: Dataset, dcfg: dict, enc: EncoderConfig, seed: int) -> ckpt_mod.Checkpoint:
    vocab = make_vocab(ds)
    cfg = M.DecoderConfig(vocab_size=len(vocab), enc_dim=enc.dim, **dcfg)
    return ckpt_mod.Checkpoint(cfg, vocab, M.init_params(cfg, seed), enc)


def params_digest(params: M.Params) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()
