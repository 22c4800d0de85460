"""``RCPT`` checkpoint files (little-endian).

Layout: ``b"RCPT"``, u16 version, decoder config (7 x u32 then f64
gate_init), vocabulary (u32 count, length-prefixed words in id order),
tensors (u32 count; per tensor: name, u8 ndim, ndim x u32 shape, f64 data),
encoder config (u64 seed, f64 alpha, u32 dim).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._binary import Reader, pack_str
from ..encoder import EncoderConfig
from .model import DecoderConfig, Params, param_shapes
from .vocab import Vocabulary

MAGIC = b"RCPT"
VERSION = 1
_CFG_INTS = ("vocab_size", "n_layers", "d_model", "n_heads", "d_ff", "max_len", "enc_dim")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: DecoderConfig
    vocab: Vocabulary
    params: Params
    encoder_config: EncoderConfig


def to_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<7I", *(getattr(cfg, f) for f in _CFG_INTS)),
             struct.pack("<d", cfg.gate_init),
             struct.pack("<I", len(ckpt.vocab))]
    parts += [pack_str(w) for w in ckpt.vocab.words]
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        parts.append(pack_str(name))
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    e = ckpt.encoder_config
    parts.append(struct.pack("<QdI", e.seed, e.alpha, e.dim))
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    r = Reader(buf, CheckpointFormatError, CheckpointFormatError)
    try:
        r.take(4)
        (version,) = r.unpack("<H")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        ints = r.unpack("<7I")
        (gate_init,) = r.unpack("<d")
        cfg = DecoderConfig(**dict(zip(_CFG_INTS, ints)), gate_init=gate_init)
        (nv,) = r.unpack("<I")
        vocab = Vocabulary([r.string() for _ in range(nv)])
        (nt,) = r.unpack("<I")
        params: Params = {}
        for _ in range(nt):
            name = r.string()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        seed, alpha, dim = r.unpack("<QdI")
        enc = EncoderConfig(dim=dim, seed=seed, alpha=alpha)
    except ValueError as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"invalid checkpoint contents: {exc}") from None
    if not r.at_end():
        raise CheckpointFormatError("trailing bytes after checkpoint")
    expected = param_shapes(cfg)
    if {k: v.shape for k, v in params.items()} != expected:
        raise CheckpointFormatError("tensor names or shapes do not match the decoder config")
    if len(vocab) != cfg.vocab_size:
        raise CheckpointFormatError("vocabulary size disagrees with decoder config")
    return Checkpoint(cfg, vocab, params, enc)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
