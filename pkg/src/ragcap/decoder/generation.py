"""Caption decoding: greedy (default) and length-normalized beam search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..prompting import PromptText, build_prompt
from . import model as M
from .vocab import BOS, EOS, PAD, Vocabulary


@dataclass(frozen=True)
class DecodeStrategy:
    beam_width: int = 1

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")


GREEDY = DecodeStrategy()


def prompt_ids(prompt: PromptText, vocab: Vocabulary, max_len: int, reserve: int = 1) -> list[int]:
    """``<bos> + prompt`` ids, dropping trailing retrieved captions to leave ``reserve`` slots."""
    p = prompt
    while True:
        ids = [BOS] + vocab.encode(p.text)
        if len(ids) + reserve <= max_len or not p.captions:
            break
        kept = p.captions[:-1]
        p = build_prompt(kept, p.retrieved_ids[:len(kept)])
    if len(ids) > max_len:
        raise M.DecoderError(f"prompt of {len(ids)} tokens does not fit max_len {max_len}")
    return ids


def _next_logprobs(params, cfg, ids, hidden):
    logits = M.forward(params, cfg, np.array([ids]), hidden[None], None)[0, -1]
    logits[[BOS, PAD]] = -np.inf
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def generate(params: M.Params, cfg: M.DecoderConfig, vocab: Vocabulary, prompt: PromptText,
             hidden: np.ndarray, max_new: int = 24, strategy: DecodeStrategy = GREEDY) -> str:
    if max_new <= 0:
        return ""
    prefix = prompt_ids(prompt, vocab, cfg.max_len, reserve=min(max_new, 8))
    budget = min(max_new, cfg.max_len - len(prefix) + 1)
    if strategy.beam_width == 1:
        out: list[int] = []
        for _ in range(budget):
            if len(prefix) + len(out) > cfg.max_len:
                break
            # argmax returns the lowest id among ties
            nxt = int(np.argmax(_next_logprobs(params, cfg, prefix + out, hidden)))
            if nxt == EOS:
                break
            out.append(nxt)
        return vocab.decode(out)
    return vocab.decode(_beam(params, cfg, prefix, hidden, budget, strategy.beam_width))


def _beam(params, cfg, prefix, hidden, budget, width):
    alive = [(0.0, [])]
    done = []
    for _ in range(budget):
        if len(prefix) + len(alive[0][1]) > cfg.max_len:
            break
        cand = []
        for score, seq in alive:
            lp = _next_logprobs(params, cfg, prefix + seq, hidden)
            for tok in np.argsort(-lp, kind="stable")[:width]:
                cand.append((score + float(lp[tok]), seq + [int(tok)]))
        cand.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, seq in cand:
            if seq[-1] == EOS:
                done.append((score / len(seq), seq[:-1]))
            else:
                alive.append((score, seq))
            if len(alive) == width:
                break
        if not alive:
            break
    done += [(s / max(len(q), 1), q) for s, q in alive]
    done.sort(key=lambda c: (-c[0], c[1]))
    return done[0][1]
