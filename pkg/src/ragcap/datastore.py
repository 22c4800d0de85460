"""Caption datastore: exact top-k cosine retrieval and the ``RCDS`` file format.

File layout (little-endian)::

    b"RCDS" | u16 version | u32 dim | u64 count
    encoder config: u64 seed | f64 alpha | u32 dim
    per entry: str entry_id | str text | str source | dim x f32 embedding

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable, Sequence

import numpy as np

from ._binary import Reader, pack_str
from .encoder import EncoderConfig, embed_text

MAGIC = b"RCDS"
VERSION = 1
ID_WIDTH = 8


class DatastoreError(ValueError):
    pass


class DimensionMismatchError(DatastoreError):
    pass


class DatastoreFormatError(DatastoreError):
    pass


class BadMagicError(DatastoreFormatError):
    pass


class VersionMismatchError(DatastoreFormatError):
    pass


class TruncatedFileError(DatastoreFormatError):
    pass


@dataclass(frozen=True)
class RetrievalHit:
    entry_id: str
    text: str
    score: float


@dataclass
class Datastore:
    """Immutable-by-convention caption store.

    Embeddings are held as float32 rows so that a save/load round trip is
    bit-exact; scores are accumulated in float64.
    """

    ids: list[str]
    texts: list[str]
    sources: list[str]
    embeddings: np.ndarray
    encoder_config: EncoderConfig
    name: str = "datastore"
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _emb64: np.ndarray = field(init=False, repr=False, compare=False)
    _id_arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2 and emb.size == 0:
            emb = emb.reshape(0, self.encoder_config.dim)
        if emb.ndim != 2 or emb.shape[1] != self.encoder_config.dim:
            raise DimensionMismatchError(
                f"embeddings shape {emb.shape} does not match dim {self.encoder_config.dim}")
        if not (len(self.ids) == len(self.texts) == len(self.sources) == emb.shape[0]):
            raise DatastoreError("entry fields have inconsistent lengths")
        if len(set(self.ids)) != len(self.ids):
            raise DatastoreError("entry ids must be unique")
        emb.flags.writeable = False
        self.embeddings = emb
        self._index = {eid: i for i, eid in enumerate(self.ids)}
        self._emb64 = emb.astype(np.float64)
        self._id_arr = np.array(self.ids, dtype=str)

    @property
    def dim(self) -> int:
        return self.encoder_config.dim

    def __len__(self) -> int:
        return len(self.ids)

    def text_of(self, entry_id: str) -> str:
        return self.texts[self._index[entry_id]]

    def ids_with_text(self, texts: Iterable[str]) -> set[str]:
        wanted = set(texts)
        return {eid for eid, t in zip(self.ids, self.texts) if t in wanted}

    @classmethod
    def empty(cls, config: EncoderConfig, name: str = "empty") -> "Datastore":
        return cls([], [], [], np.zeros((0, config.dim), np.float32), config, name)


def build(
    captions: Sequence[tuple[str, str]],
    config: EncoderConfig,
    events: Collection[str] = (),
    name: str = "datastore",
) -> Datastore:
    """Embed ``(text, source)`` pairs into a new store with sequential ids."""
    if not captions:
        raise DatastoreError("cannot build a datastore from an empty caption list")
    known = frozenset(events)
    width = max(ID_WIDTH, len(str(len(captions) - 1)))
    rows = []
    for i, (text, _source) in enumerate(captions):
        if not text or not text.strip():
            raise DatastoreError(f"caption at index {i} is empty")
        rows.append(embed_text(text, config, known))
    return Datastore(
        ids=[f"{i:0{width}d}" for i in range(len(captions))],
        texts=[t for t, _ in captions],
        sources=[s for _, s in captions],
        embeddings=np.stack(rows).astype(np.float32),
        encoder_config=config,
        name=name,
    )


def scores(store: Datastore, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (store.dim,):
        raise DimensionMismatchError(f"query dim {q.shape} does not match store dim {store.dim}")
    # Row-wise product + sum: identical rows always get identical scores.
    s = (store._emb64 * q).sum(axis=1)
    return np.clip(s, -1.0, 1.0)


def query_topk(
    store: Datastore, query: np.ndarray, k: int, exclude: Collection[str] = ()
) -> list[RetrievalHit]:
    if k < 1:
        raise DatastoreError(f"k must be >= 1, got {k}")
    s = scores(store, query)
    keep = np.ones(len(store), dtype=bool)
    for eid in exclude:
        i = store._index.get(eid)
        if i is not None:
            keep[i] = False
    cand = np.flatnonzero(keep)
    if cand.size == 0:
        return []
    # lexsort: last key is primary -> descending score, then ascending id.
    order = np.lexsort((store._id_arr[cand], -s[cand]))[:k]
    return [RetrievalHit(store.ids[cand[j]], store.texts[cand[j]], float(s[cand[j]])) for j in order]


def merge(a: Datastore, b: Datastore, name: str | None = None) -> Datastore:
    if a.encoder_config != b.encoder_config:
        raise DatastoreError("cannot merge stores built with different encoder configs")
    pa, pb = a.name, b.name
    if pa == pb:
        pa, pb = f"{pa}.a", f"{pb}.b"
    ids = [f"{pa}:{i}" for i in a.ids] + [f"{pb}:{i}" for i in b.ids]
    return Datastore(
        ids=ids,
        texts=a.texts + b.texts,
        sources=a.sources + b.sources,
        embeddings=np.concatenate([a.embeddings, b.embeddings]),
        encoder_config=a.encoder_config,
        name=name or f"{a.name}+{b.name}",
    )


def to_bytes(store: Datastore) -> bytes:
    cfg = store.encoder_config
    parts = [
        MAGIC,
        struct.pack("<HIQ", VERSION, store.dim, len(store)),
        struct.pack("<QdI", cfg.seed, cfg.alpha, cfg.dim),
    ]
    emb = store.embeddings.astype("<f4")
    for i in range(len(store)):
        parts += [pack_str(store.ids[i]), pack_str(store.texts[i]),
                  pack_str(store.sources[i]), emb[i].tobytes()]
    return b"".join(parts)


def from_bytes(buf: bytes, name: str = "datastore") -> Datastore:
    r = Reader(buf, TruncatedFileError, DatastoreFormatError)
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a datastore file")
    r.take(len(MAGIC))
    version, dim, count = r.unpack("<HIQ")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported datastore version {version} (expected {VERSION})")
    seed, alpha, cfg_dim = r.unpack("<QdI")
    if cfg_dim != dim:
        raise DatastoreFormatError(f"header dim {dim} disagrees with encoder config dim {cfg_dim}")
    try:
        config = EncoderConfig(dim=cfg_dim, seed=seed, alpha=alpha)
    except ValueError as exc:
        raise DatastoreFormatError(f"invalid encoder config: {exc}") from None
    ids, texts, sources, rows = [], [], [], []
    for _ in range(count):
        ids.append(r.string())
        texts.append(r.string())
        sources.append(r.string())
        rows.append(np.frombuffer(r.take(4 * dim), dtype="<f4"))
    if not r.at_end():
        raise DatastoreFormatError(f"{len(buf) - r.pos} trailing bytes after last entry")
    emb = np.stack(rows).astype(np.float32) if rows else np.zeros((0, dim), np.float32)
    try:
        return Datastore(ids, texts, sources, emb, config, name)
    except DatastoreError as exc:
        raise DatastoreFormatError(str(exc)) from None


def save(store: Datastore, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(store))


def load(path: str | Path) -> Datastore:
    p = Path(path)
    return from_bytes(p.read_bytes(), name=p.stem)
