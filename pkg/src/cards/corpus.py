"""Corpus cleaning and similarity-benchmark parsing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ValidationError
from .tokenizer import TokenSeq
from .util import open_text


@dataclass(frozen=True)
class Sentence:
    id: int
    text: str

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValidationError(f"sentence id must be non-negative, got {self.id}")
        if not self.text:
            raise ValidationError("sentence text must be non-empty")


@dataclass(frozen=True)
class StsExample:
    """A sentence pair with a human similarity score on the 0-5 scale."""

    sent_a: str
    sent_b: str
    gold: float

    def __post_init__(self) -> None:
        if not self.sent_a or not self.sent_b:
            raise ValidationError("both sentences of a pair must be non-empty")
        if not 0.0 <= self.gold <= 5.0:
            raise ValidationError(f"gold score must be in [0, 5], got {self.gold}")


def clean_corpus(lines: Iterable[str], min_words: int = 3) -> Iterator[Sentence]:
    """Yield deduplicated sentences with at least `min_words` whitespace words.

    One input line is one candidate sentence (a trailing newline is removed,
    other whitespace is preserved).  Duplicates are exact string matches; the
    first occurrence wins.  Ids number the survivors from zero.
    """
    if min_words < 0:
        raise ValidationError(f"min_words must be >= 0, got {min_words}")
    seen: set[str] = set()
    next_id = 0
    for line in lines:
        text = line.rstrip("\n")
        if len(text.split()) < min_words or not text:
            continue
        if text in seen:
            continue
        seen.add(text)
        yield Sentence(next_id, text)
        next_id += 1


def read_corpus(path: str) -> list[Sentence]:
    """Read one sentence per line from a text file (gzip transparent)."""
    with open_text(path) as f:
        sentences = [
            Sentence(i, line.rstrip("\n")) for i, line in enumerate(f) if line.rstrip("\n")
        ]
    if not sentences:
        raise ValidationError(f"{path}: corpus is empty")
    return sentences


def truncate_tokens(seq: TokenSeq, max_tokens: int) -> TokenSeq:
    """Keep the first `max_tokens` tokens of a sequence."""
    if max_tokens < 1:
        raise ValidationError(f"max_tokens must be >= 1, got {max_tokens}")
    if len(seq) <= max_tokens:
        return seq
    return TokenSeq(seq.ids[:max_tokens], seq.offsets[:max_tokens])


def load_sts(path: str, has_header: bool = False) -> list[StsExample]:
    """Parse a tab-separated file of (sentence_a, sentence_b, gold) rows.

    Malformed rows raise ValidationError naming the line number; with
    `has_header` the first line is skipped unparsed.
    """
    examples: list[StsExample] = []
    with open_text(path) as f:
        for lineno, line in enumerate(f, start=1):
            if has_header and lineno == 1:
                continue
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValidationError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
            sent_a, sent_b, raw_score = fields
            try:
                gold = float(raw_score)
            except ValueError as e:
                raise ValidationError(f"{path}: line {lineno}: gold score {raw_score!r} is not a number") from e
            try:
                examples.append(StsExample(sent_a, sent_b, gold))
            except ValidationError as e:
                raise ValidationError(f"{path}: line {lineno}: {e}") from e
    if not examples:
        raise ValidationError(f"{path}: no examples found")
    return examples
