"""Teacher-forced training of the decoder.

``train`` updates only the cross-attention group. ``pretrain_base`` is the
stand-in for a pretrained language model: it fits the base weights on
text-only prompt+caption sequences (cross-attention switched off) before
they are frozen.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..prompting import PromptText, build_prompt
from . import model as M
from .vocab import BOS, EOS, PAD, Vocabulary

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    epochs: int = 100
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"lr must be a positive finite number, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class Example:
    """One teacher-forced sequence: ``<bos> prompt caption <eos>``."""

    inputs: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray
    hidden: np.ndarray | None = None
    prompt: PromptText | None = None


def encode_example(prompt: PromptText, caption: str, vocab: Vocabulary, max_len: int,
                   hidden: np.ndarray | None = None) -> Example:
    """Tokenize, dropping lowest-ranked retrieved captions until the sequence fits."""
    cap_ids = vocab.encode(caption)
    p = prompt
    while True:
        seq = [BOS] + vocab.encode(p.text) + cap_ids + [EOS]
        if len(seq) - 1 <= max_len:
            break
        if not p.captions:
            raise M.DecoderError(
                f"caption needs {len(seq) - 1} positions even without retrieved captions (max {max_len})")
        kept = p.captions[:-1]
        p = build_prompt(kept, p.retrieved_ids[:len(kept)])
    n_prompt = len(seq) - len(cap_ids) - 2
    mask = np.zeros(len(seq) - 1, dtype=bool)
    mask[n_prompt:] = True
    return Example(np.array(seq[:-1]), np.array(seq[1:]), mask, hidden, p)


def collate(batch: Sequence[Example]):
    T = max(len(e.inputs) for e in batch)
    B = len(batch)
    tokens = np.full((B, T), PAD)
    targets = np.full((B, T), PAD)
    mask = np.zeros((B, T), dtype=bool)
    for i, e in enumerate(batch):
        n = len(e.inputs)
        tokens[i, :n], targets[i, :n], mask[i, :n] = e.inputs, e.targets, e.loss_mask
    if batch[0].hidden is None:
        return tokens, targets, mask, None, None
    N = max(e.hidden.shape[0] for e in batch)
    hidden = np.zeros((B, N, batch[0].hidden.shape[1]))
    hmask = np.zeros((B, N), dtype=bool)
    for i, e in enumerate(batch):
        hidden[i, :len(e.hidden)] = e.hidden
        hmask[i, :len(e.hidden)] = True
    return tokens, targets, mask, hidden, hmask


class Adam:
    def __init__(self, params: M.Params, names: Sequence[str], cfg: TrainConfig):
        self.cfg = cfg
        self.names = list(names)
        self.m = {k: np.zeros_like(params[k]) for k in self.names}
        self.v = {k: np.zeros_like(params[k]) for k in self.names}
        self.t = 0

    def step(self, params: M.Params, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k in self.names:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


@dataclass
class TrainResult:
    params: M.Params
    losses: list[float] = field(default_factory=list)
    dev_losses: list[float] = field(default_factory=list)


def evaluate_loss(params: M.Params, cfg: M.DecoderConfig, examples: Sequence[Example],
                  batch_size: int = 64, use_xattn: bool = True) -> float:
    total = 0.0
    for i in range(0, len(examples), batch_size):
        tokens, targets, mask, hidden, hmask = collate(examples[i:i + batch_size])
        logits = M.forward(params, cfg, tokens, hidden, hmask, use_xattn)
        total += M.per_example_loss(logits, targets, mask).sum()
    return total / len(examples)


def _fit(params: M.Params, cfg: M.DecoderConfig, examples: Sequence[Example], tcfg: TrainConfig,
         trainable: Callable[[str], bool], use_xattn: bool,
         dev: Sequence[Example] = (), on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    if not examples:
        raise ValueError("no training examples")
    params = M.copy_params(params)
    names = [k for k in params if trainable(k)]
    opt = Adam(params, names, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    result = TrainResult(params)
    n = len(examples)
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tcfg.batch_size):
            batch = [examples[i] for i in order[start:start + tcfg.batch_size]]
            tokens, targets, mask, hidden, hmask = collate(batch)
            value, grads = M.loss_and_grads(params, cfg, tokens, targets, mask, hidden, hmask,
                                            use_xattn=use_xattn, wanted=trainable)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}")
            opt.step(params, grads)
            total += value * len(batch)
        result.losses.append(total / n)
        if dev:
            result.dev_losses.append(evaluate_loss(params, cfg, dev, use_xattn=use_xattn))
        if on_epoch is not None:
            on_epoch(epoch + 1, result.losses[-1])
    return result


def train(params: M.Params, cfg: M.DecoderConfig, examples: Sequence[Example],
          tcfg: TrainConfig = TrainConfig(), dev: Sequence[Example] = (),
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam on the cross-attention group only; base tensors are never written."""
    log.info("trainable fraction %.3f", M.trainable_fraction(params))
    return _fit(params, cfg, examples, tcfg, M.is_xattn, True, dev, on_epoch)


def pretrain_base(params: M.Params, cfg: M.DecoderConfig, examples: Sequence[Example],
                  tcfg: TrainConfig, on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    return _fit(params, cfg, examples, tcfg, lambda k: not M.is_xattn(k), False, (), on_epoch)


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")
