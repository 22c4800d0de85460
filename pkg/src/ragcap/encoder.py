"""Deterministic hash-based dual encoder for synthetic audio and captions.

Audio samples are sequences of event tokens. Both modalities land in the same
unit-norm space because every word (event names included) maps to a fixed
pseudo-random vector derived from ``hash(seed, word)``.
"""

from __future__ import annotations

import functools
import hashlib
import re
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EVENT_RE = re.compile(r"^[a-z0-9_]+$")

# Underscore is kept so event names such as "dog_bark" survive tokenization.
_PUNCT = string.punctuation.replace("_", "")
_PUNCT_TABLE = str.maketrans("", "", _PUNCT)

POSITION_SCALE = 0.1


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    seed: int = 0
    alpha: float = 0.1

    def __post_init__(self):
        if self.dim < 2:
            raise EncoderError(f"dim must be >= 2, got {self.dim}")
        if not 0.0 <= self.alpha <= 1.0:
            raise EncoderError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0 <= self.seed < 2**64:
            raise EncoderError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class AudioSample:
    id: str
    events: tuple[str, ...]
    domain: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for ev in self.events:
            validate_event(ev)


def validate_event(name: str) -> str:
    if not name or not EVENT_RE.match(name):
        raise EncoderError(f"invalid event token {name!r}")
    return name


def tokenize(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation (except ``_``) and split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def _rng_for(config: EncoderConfig, *parts: object) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(config.seed).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode("utf-8"))
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


@functools.lru_cache(maxsize=1 << 16)
def _cached_word_vector(word: str, config: EncoderConfig) -> np.ndarray:
    v = _rng_for(config, "word", word).standard_normal(config.dim)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def word_vector(word: str, config: EncoderConfig) -> np.ndarray:
    """Unit vector for any word; event names and filler words share the scheme."""
    return _cached_word_vector(word, config)


def base_vector(token: str, config: EncoderConfig) -> np.ndarray:
    return word_vector(validate_event(token), config)


def position_vector(i: int, config: EncoderConfig) -> np.ndarray:
    return POSITION_SCALE * _rng_for(config, "pos", i).standard_normal(config.dim)


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise EncoderError("cannot normalize a zero vector")
    return v / norm


def embed_audio(sample: AudioSample | Sequence[str], config: EncoderConfig) -> np.ndarray:
    events = sample.events if isinstance(sample, AudioSample) else tuple(sample)
    if not events:
        raise EncoderError("empty audio")
    total = np.zeros(config.dim)
    for ev in events:
        total += base_vector(ev, config)
    return _normalize(total)


def embed_text(
    caption: str, config: EncoderConfig, events: Iterable[str] = ()
) -> np.ndarray:
    """Bag-of-words caption embedding.

    Words found in ``events`` count with weight 1, every other word with
    ``config.alpha``. If ``alpha`` is 0 and no event word is present the
    caption has no direction and an error is raised.
    """
    words = tokenize(caption)
    if not words:
        raise EncoderError("empty text")
    known = events if isinstance(events, (set, frozenset)) else frozenset(events)
    total = np.zeros(config.dim)
    for w in words:
        weight = 1.0 if w in known else config.alpha
        if weight:
            total += weight * word_vector(w, config)
    return _normalize(total)


def audio_hidden_states(sample: AudioSample | Sequence[str], config: EncoderConfig) -> np.ndarray:
    """Per-event hidden rows ``base_vector(event_i) + position_vector(i)`` (not normalized)."""
    events = sample.events if isinstance(sample, AudioSample) else tuple(sample)
    if not events:
        raise EncoderError("empty audio")
    rows = [base_vector(ev, config) + position_vector(i, config) for i, ev in enumerate(events)]
    return np.stack(rows)
