from .checkpoint import Checkpoint, CheckpointFormatError
from .generation import GREEDY, DecodeStrategy, generate
from .model import (
    DecoderConfig,
    DecoderError,
    forward,
    freeze_mask,
    grad,
    init_params,
    is_xattn,
    loss,
    trainable_fraction,
)
from .training import Example, NumericalError, TrainConfig, encode_example, pretrain_base, train
from .vocab import BOS, EOS, PAD, UNK, Vocabulary, build_vocab

__all__ = [
    "BOS", "EOS", "PAD", "UNK", "Checkpoint", "CheckpointFormatError", "DecodeStrategy",
    "DecoderConfig", "DecoderError", "Example", "GREEDY", "NumericalError", "TrainConfig",
    "Vocabulary", "build_vocab", "encode_example", "forward", "freeze_mask", "generate", "grad",
    "init_params", "is_xattn", "loss", "pretrain_base", "train", "trainable_fraction",
]
