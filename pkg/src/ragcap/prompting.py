"""Prompt construction from retrieved captions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Sequence

from .datastore import Datastore, query_topk
from .encoder import AudioSample, embed_audio

PREFIX = "Audios similar to this audio sounds like: "
SUFFIX = "This audio sounds like:"
SEPARATOR = ", "


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise PromptError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class PromptText:
    text: str
    retrieved_ids: tuple[str, ...] = ()
    captions: tuple[str, ...] = ()

    @property
    def k_used(self) -> int:
        return len(self.retrieved_ids)


def format_prompt(captions: Sequence[str]) -> str:
    for i, c in enumerate(captions):
        if not c.strip():
            raise PromptError(f"caption {i} is blank")
    if not captions:
        return SUFFIX
    return PREFIX + SEPARATOR.join(captions) + ". " + SUFFIX


def build_prompt(captions: Sequence[str], retrieved_ids: Sequence[str] = ()) -> PromptText:
    """Wrap ``captions`` (verbatim, in rank order) in the fixed prompt template."""
    return PromptText(format_prompt(captions), tuple(retrieved_ids), tuple(captions))


def parse_prompt(text: str) -> list[str]:
    """Inverse of :func:`format_prompt` for captions that do not contain ``", "``."""
    if text == SUFFIX:
        return []
    tail = ". " + SUFFIX
    if not (text.startswith(PREFIX) and text.endswith(tail)):
        raise PromptError("text does not follow the prompt template")
    return text[len(PREFIX):-len(tail)].split(SEPARATOR)


def retrieve_and_prompt(
    sample: AudioSample,
    store: Datastore,
    cfg: RetrievalConfig = RetrievalConfig(),
    exclude: Collection[str] = (),
) -> PromptText:
    hits = query_topk(store, embed_audio(sample, store.encoder_config), cfg.k, exclude)
    return build_prompt([h.text for h in hits], [h.entry_id for h in hits])


def sibling_exclusion(store: Datastore, references: Sequence[str], all_siblings: bool = True,
                      target: str | None = None) -> set[str]:
    """Entry ids to hide while training on one audio.

    By default every reference caption of the audio is hidden; with
    ``all_siblings=False`` only entries matching ``target`` are.
    """
    if all_siblings:
        return store.ids_with_text(references)
    if target is None:
        raise PromptError("target caption required when all_siblings is False")
    return store.ids_with_text([target])
