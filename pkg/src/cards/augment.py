"""Case-flip augmentation over byte-level BPE tokenizations.

The core transform flips the case of the first letter of randomly selected
words.  Because subword vocabularies key on surface form, a flip perturbs the
tokenization itself; every perturbation falls into one of four outcome
classes, determined by comparing token counts and interior token boundaries
of the original and flipped tokenizations:

* Substitution: same token count, only the first token differs.
* Division: boundary set strictly grows (first token splits further).
* Fusion: boundary set strictly shrinks (leading tokens merge).
* Regrouping: boundaries shift without one set containing the other.

Words are classified in bare form (no word-initial marker), which is what the
case flip actually perturbs; sentence-level transforms then apply the flip in
context.  Two ablation transforms reuse the same selection stream: one flips
only Substitution-class words, the other keeps the original characters but
forces the flipped variant's token boundaries.
"""

from __future__ import annotations

import enum
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ValidationError
from .tokenizer import TokenSeq, Tokenizer
from .util import chunked

_STATS_CHUNK = 256  # sentences per worker chunk; fixed so thread count cannot change results


class OutcomeClass(enum.Enum):
    SUBSTITUTION = "substitution"
    DIVISION = "division"
    FUSION = "fusion"
    REGROUPING = "regrouping"


class FlipDirection(enum.Enum):
    LOWER_TO_UPPER = "lower_to_upper"
    UPPER_TO_LOWER = "upper_to_lower"


VARIANTS = ("default", "substitution_only", "re_tokenization", "lowercase_all", "word_repetition")


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation knobs: selection probability, variant, and RNG seed."""

    p_sc: float = 0.15
    variant: str = "default"
    seed: int = 0

    _VARIANTS = VARIANTS

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_sc <= 1.0:
            raise ValidationError(f"p_sc must be in [0, 1], got {self.p_sc}")
        if self.variant not in self._VARIANTS:
            raise ValidationError(
                f"unknown variant {self.variant!r}; expected one of {self._VARIANTS}"
            )

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _flipped_first(word: str) -> str | None:
    """The word with its first letter case-flipped, or None when not flippable.

    A word qualifies only when the flip is a single-character involution, so
    flipping twice restores the original (rules out e.g. German sharp s).
    """
    if not word:
        return None
    first = word[0]
    if first.islower():
        flipped = first.upper()
        restored = flipped.lower()
    elif first.isupper():
        flipped = first.lower()
        restored = flipped.upper()
    else:
        return None
    if len(flipped) != 1 or restored != first:
        return None
    return flipped + word[1:]


def is_flippable(word: str) -> bool:
    """True when the word starts with a letter whose case flip is reversible."""
    return _flipped_first(word) is not None


def flip_first_letter(word: str) -> str:
    """Flip the case of the first letter; unflippable words pass through."""
    flipped = _flipped_first(word)
    return word if flipped is None else flipped


def flip_direction(word: str) -> FlipDirection:
    if not is_flippable(word):
        raise ValidationError(f"word {word!r} is not flippable")
    return FlipDirection.LOWER_TO_UPPER if word[0].islower() else FlipDirection.UPPER_TO_LOWER


def _interior_boundaries(seq: TokenSeq) -> frozenset[int]:
    """Interior token boundaries as byte distances from the end of the word.

    Anchoring at the end keeps boundaries in the shared suffix comparable even
    when the flipped first character has a different UTF-8 length.
    """
    total = seq.offsets[-1][1]
    return frozenset(total - start for start, _ in seq.offsets[1:])


def classify_outcome(original: TokenSeq, flipped: TokenSeq) -> OutcomeClass:
    """Classify how a first-letter case flip changed a word's tokenization.

    Both sequences must tokenize the bare word (original and flipped case).
    """
    if len(original) == 0 or len(flipped) == 0:
        raise ContractViolation("cannot classify empty tokenizations")
    if len(original) == len(flipped) and original.ids[1:] == flipped.ids[1:]:
        return OutcomeClass.SUBSTITUTION
    b_orig = _interior_boundaries(original)
    b_flip = _interior_boundaries(flipped)
    if b_orig < b_flip:
        return OutcomeClass.DIVISION
    if b_flip < b_orig:
        return OutcomeClass.FUSION
    return OutcomeClass.REGROUPING


@dataclass(frozen=True)
class OutcomeRecord:
    """One classified case flip: the word, both tokenizations, the class."""

    word: str
    original_tokens: TokenSeq
    flipped_tokens: TokenSeq
    outcome: OutcomeClass
    direction: FlipDirection


def classify_word(tokenizer: Tokenizer, word: str) -> OutcomeRecord:
    """Tokenize a flippable word bare, flip it, and classify the outcome."""
    flipped_word = _flipped_first(word)
    if flipped_word is None:
        raise ValidationError(f"word {word!r} is not flippable")
    original = tokenizer.encode(word)
    flipped = tokenizer.encode(flipped_word)
    if tokenizer.decode(original).lower() != tokenizer.decode(flipped).lower():
        raise ContractViolation(f"tokenizations of {word!r} do not decode to case variants")
    return OutcomeRecord(
        word, original, flipped, classify_outcome(original, flipped), flip_direction(word)
    )


_WS_SPLIT = re.compile(r"(\s+)")


def _split_words(sentence: str) -> list[str]:
    """Split into alternating word/whitespace parts; joining restores the input."""
    return _WS_SPLIT.split(sentence)


def switch_case(sentence: str, config: AugmentConfig, rng: np.random.Generator) -> str:
    """Flip the first letter of each flippable word with probability p_sc.

    One uniform draw is consumed per flippable word, in order; unflippable
    words consume none.  Whitespace is preserved exactly.
    """
    parts = _split_words(sentence)
    for i, part in enumerate(parts):
        if part and not part.isspace() and is_flippable(part):
            if rng.random() < config.p_sc:
                parts[i] = flip_first_letter(part)
    return "".join(parts)


def augment_substitution_only(
    sentence: str, tokenizer: Tokenizer, config: AugmentConfig, rng: np.random.Generator
) -> str:
    """Like `switch_case`, but apply only flips classified as Substitution.

    Selection draws are identical to `switch_case` under the same RNG state;
    selected words of other classes are left unchanged.
    """
    parts = _split_words(sentence)
    for i, part in enumerate(parts):
        if part and not part.isspace() and is_flippable(part):
            if rng.random() < config.p_sc:
                if classify_word(tokenizer, part).outcome is OutcomeClass.SUBSTITUTION:
                    parts[i] = flip_first_letter(part)
    return "".join(parts)


def augment_retokenization(
    sentence: str, tokenizer: Tokenizer, config: AugmentConfig, rng: np.random.Generator
) -> TokenSeq:
    """Keep the original characters but adopt flip-induced token boundaries.

    Selected words classified as Division or Regrouping are re-encoded with
    the flipped variant's boundaries forced onto the original spelling; all
    other text is tokenized normally.  A forced boundary that falls inside a
    multi-byte character cannot be represented, so such words fall back to
    their normal tokenization.  The result always decodes to `sentence`.
    """
    parts = _split_words(sentence)
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    pos = 0

    def extend(piece: str, seq: TokenSeq) -> None:
        nonlocal pos
        ids.extend(seq.ids)
        offsets.extend((pos + s, pos + e) for s, e in seq.offsets)
        pos += len(piece.encode("utf-8"))

    pending_space = ""
    for part in parts:
        if not part:
            continue
        if part.isspace():
            if part.endswith(" "):
                # hold one space back so it attaches to the following word,
                # as the pre-tokenizer would
                if len(part) > 1:
                    extend(part[:-1], tokenizer.encode(part[:-1]))
                pending_space = " "
            else:
                extend(part, tokenizer.encode(part))
            continue
        piece = pending_space + part
        pending_space = ""
        forced: TokenSeq | None = None
        if is_flippable(part) and rng.random() < config.p_sc:
            record = classify_word(tokenizer, part)
            if record.outcome in (OutcomeClass.DIVISION, OutcomeClass.REGROUPING):
                forced = _force_boundaries(tokenizer, piece, part)
        extend(piece, forced if forced is not None else tokenizer.encode(piece))
    if pending_space:
        extend(pending_space, tokenizer.encode(pending_space))
    return TokenSeq(tuple(ids), tuple(offsets))


def _force_boundaries(tokenizer: Tokenizer, piece: str, word: str) -> TokenSeq | None:
    """Encode `piece` (optionally space-prefixed `word`) with the boundaries of
    the flipped word's tokenization.  None when a boundary splits a character
    or a forced segment does not survive encoding intact."""
    flipped = tokenizer.encode(flip_first_letter(word))
    word_bytes = word.encode("utf-8")
    cuts = sorted(_interior_boundaries(flipped))
    segments: list[str] = []
    prev = len(word_bytes)
    for back in cuts:
        start = len(word_bytes) - back
        if start <= 0 or start >= prev:
            return None
        try:
            segments.append(word_bytes[start:prev].decode("utf-8"))
        except UnicodeDecodeError:
            return None
        prev = start
    try:
        segments.append(word_bytes[:prev].decode("utf-8"))
    except UnicodeDecodeError:
        return None
    segments.reverse()
    prefix = piece[: len(piece) - len(word)]
    segments[0] = prefix + segments[0]
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    pos = 0
    for segment in segments:
        seq = tokenizer.encode(segment)
        if tokenizer.decode(seq) != segment:
            return None
        ids.extend(seq.ids)
        offsets.extend((pos + s, pos + e) for s, e in seq.offsets)
        pos += len(segment.encode("utf-8"))
    return TokenSeq(tuple(ids), tuple(offsets))


def lowercase_transform(sentence: str) -> str:
    """Lowercase every cased letter; idempotent."""
    return sentence.lower()


def uppercase_first(sentence: str) -> str:
    """Uppercase the first character when that is a reversible single-char change."""
    if not sentence:
        return sentence
    first = sentence[0]
    upper = first.upper()
    if first.islower() and len(upper) == 1 and upper.lower() == first:
        return upper + sentence[1:]
    return sentence


def word_repetition(sentence: str, repeat_prob: float, rng: np.random.Generator) -> str:
    """Duplicate each word in place with the given probability."""
    if not 0.0 <= repeat_prob <= 1.0:
        raise ValidationError(f"repeat_prob must be in [0, 1], got {repeat_prob}")
    parts = _split_words(sentence)
    for i, part in enumerate(parts):
        if part and not part.isspace():
            if rng.random() < repeat_prob:
                parts[i] = part + " " + part
    return "".join(parts)


# -- corpus-level outcome statistics --------------------------------------


@dataclass
class OutcomeStats:
    """Counts of flip outcomes over selected words, split by flip direction."""

    counts: dict[tuple[OutcomeClass, FlipDirection], int] = field(default_factory=dict)
    total_selected: int = 0
    changed_token_count: int = 0

    def add(self, outcome: OutcomeClass, direction: FlipDirection, count_changed: bool) -> None:
        key = (outcome, direction)
        self.counts[key] = self.counts.get(key, 0) + 1
        self.total_selected += 1
        if count_changed:
            self.changed_token_count += 1

    def merge(self, other: "OutcomeStats") -> "OutcomeStats":
        merged = OutcomeStats(dict(self.counts), self.total_selected, self.changed_token_count)
        for key, value in other.counts.items():
            merged.counts[key] = merged.counts.get(key, 0) + value
        merged.total_selected += other.total_selected
        merged.changed_token_count += other.changed_token_count
        return merged

    def percentage(self, outcome: OutcomeClass, direction: FlipDirection | None = None) -> float:
        if self.total_selected == 0:
            raise ValidationError("no selected words; percentages are undefined")
        if direction is None:
            total = sum(v for (o, _), v in self.counts.items() if o is outcome)
        else:
            total = self.counts.get((outcome, direction), 0)
        return 100.0 * total / self.total_selected

    @property
    def changed_token_count_pct(self) -> float:
        if self.total_selected == 0:
            raise ValidationError("no selected words; percentages are undefined")
        return 100.0 * self.changed_token_count / self.total_selected

    def to_tsv(self) -> str:
        header = "outcome\tdirection\tcount\tpercentage"
        rows = [header]
        for outcome in OutcomeClass:
            for direction in FlipDirection:
                count = self.counts.get((outcome, direction), 0)
                rows.append(
                    f"{outcome.value}\t{direction.value}\t{count}\t"
                    f"{self.percentage(outcome, direction):.4f}"
                )
        rows.append(f"# total_selected\t{self.total_selected}")
        rows.append(f"# changed_token_count_pct\t{self.changed_token_count_pct:.4f}")
        return "\n".join(rows) + "\n"


def _stats_for_chunk(
    sentences: list[str], tokenizer: Tokenizer, p_sc: float, rng: np.random.Generator
) -> OutcomeStats:
    stats = OutcomeStats()
    for sentence in sentences:
        for part in _split_words(sentence):
            if not part or part.isspace() or not is_flippable(part):
                continue
            if rng.random() >= p_sc:
                continue
            original = tokenizer.encode(part)
            flipped = tokenizer.encode(flip_first_letter(part))
            outcome = classify_outcome(original, flipped)
            stats.add(outcome, flip_direction(part), len(original) != len(flipped))
    return stats


def outcome_stats(
    sentences: list[str],
    tokenizer: Tokenizer,
    config: AugmentConfig,
    threads: int = 1,
) -> OutcomeStats:
    """Aggregate flip-outcome statistics over a corpus.

    Work is sharded into fixed-size chunks with independently seeded RNG
    streams derived from config.seed, so results do not depend on `threads`.
    """
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    chunks = list(chunked(sentences, _STATS_CHUNK))
    if not chunks:
        raise ValidationError("corpus is empty")
    seeds = np.random.SeedSequence(config.seed).spawn(len(chunks))
    jobs = [(chunk, np.random.default_rng(seed)) for chunk, seed in zip(chunks, seeds)]
    if threads == 1:
        results = [_stats_for_chunk(c, tokenizer, config.p_sc, r) for c, r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda job: _stats_for_chunk(job[0], tokenizer, config.p_sc, job[1]), jobs)
            )
    stats = OutcomeStats()
    for partial in results:
        stats = stats.merge(partial)
    if stats.total_selected == 0:
        raise ValidationError("no words were selected; corpus may lack flippable words")
    return stats
