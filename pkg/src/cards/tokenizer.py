"""Byte-level BPE tokenizer.

Loads the published two-file format (a JSON vocabulary mapping token strings
to ids, and a merges file listing symbol pairs in priority order) and encodes
arbitrary UTF-8 text losslessly.  Raw bytes are first mapped through a fixed
injective byte-to-printable-character table so every token string is visible
text; the mapped form of the space byte (U+0120) doubles as the word-initial
marker.  Text is split by a fixed pre-tokenizer pattern and merges are applied
greedily inside each piece, lowest rank first.

A stochastic variant, `encode_with_merge_dropout`, replays the deterministic
merge sequence but skips each recorded merge independently with probability
`p_drop`, yielding a segmentation that is always a refinement of the
deterministic one (never fewer tokens).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import regex

from .errors import ValidationError

# Pre-tokenizer: contractions, letter runs, digit runs, punctuation runs,
# and whitespace, with a single leading space absorbed into word pieces.
_PRETOKEN_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)

WORD_MARKER = "Ġ"  # mapped form of the space byte, shown as Ġ


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """Injective map from all 256 byte values to printable unicode characters.

    Printable ASCII and two Latin-1 ranges map to themselves; the remaining
    bytes are assigned codepoints 256 and up, in byte order.
    """
    keep = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    mapped = keep[:]
    bumped = 0
    for b in range(256):
        if b not in keep:
            keep.append(b)
            mapped.append(256 + bumped)
            bumped += 1
    return dict(zip(keep, (chr(c) for c in mapped)))


@dataclass(frozen=True)
class TokenSeq:
    """Token ids plus the byte span each token covers in the source text.

    Offsets are (start, end) positions into the UTF-8 encoding of the source;
    spans partition the text exactly, in order, with no gaps.
    """

    ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.offsets):
            raise ValidationError(
                f"ids and offsets length mismatch: {len(self.ids)} vs {len(self.offsets)}"
            )

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)


class Vocab:
    """Bidirectional token-string/id table with contiguous ids from zero."""

    def __init__(self, token_to_id: dict[str, int]):
        if not token_to_id:
            raise ValidationError("vocabulary is empty")
        ids = sorted(token_to_id.values())
        if len(set(ids)) != len(ids):
            raise ValidationError("vocabulary maps two tokens to the same id")
        if ids[0] != 0 or ids[-1] != len(ids) - 1:
            raise ValidationError(
                f"vocabulary ids must be contiguous from 0, got range [{ids[0]}, {ids[-1]}] for {len(ids)} tokens"
            )
        self.token_to_id = dict(token_to_id)
        self.id_to_token = {i: t for t, i in token_to_id.items()}

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


class MergeRules:
    """Ordered list of symbol pairs; list position is merge priority (rank)."""

    def __init__(self, pairs: Sequence[tuple[str, str]]):
        self.pairs = list(pairs)
        self.rank = {pair: i for i, pair in enumerate(self.pairs)}
        if len(self.rank) != len(self.pairs):
            raise ValidationError("duplicate pair in merge rules")

    def __len__(self) -> int:
        return len(self.pairs)


class Tokenizer:
    """Immutable byte-level BPE encoder/decoder.

    Instances are safe for concurrent reads; the per-piece merge cache is
    filled lazily but idempotently.
    """

    def __init__(self, vocab: Vocab, merges: MergeRules):
        self.vocab = vocab
        self.merges = merges
        self.byte_encoder = bytes_to_unicode()
        self.byte_decoder = {c: b for b, c in self.byte_encoder.items()}
        for b in range(256):
            if self.byte_encoder[b] not in vocab:
                raise ValidationError(
                    f"vocabulary is missing the single-byte token for byte {b:#04x}"
                )
        for i, (a, b) in enumerate(merges.pairs):
            if a not in vocab or b not in vocab or a + b not in vocab:
                raise ValidationError(
                    f"merge rule {i} ({a!r}, {b!r}) references a token missing from the vocabulary"
                )
        self._segment_cache: dict[str, tuple[str, ...]] = {}
        self._trace_cache: dict[str, tuple[int, list[tuple[int, int]]]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    # -- deterministic encoding ------------------------------------------

    def encode(self, text: str) -> TokenSeq:
        """Tokenize `text`; token offsets are byte spans into its UTF-8 form."""
        ids: list[int] = []
        offsets: list[tuple[int, int]] = []
        pos = 0
        for piece in _PRETOKEN_PATTERN.findall(text):
            for token in self._segment(piece):
                ids.append(self.vocab.token_to_id[token])
                offsets.append((pos, pos + len(token)))
                pos += len(token)
        return TokenSeq(tuple(ids), tuple(offsets))

    def decode(self, tokens: TokenSeq | Iterable[int]) -> str:
        """Invert `encode`; malformed byte runs decode with U+FFFD."""
        ids = tokens.ids if isinstance(tokens, TokenSeq) else tuple(tokens)
        chars = []
        for i in ids:
            token = self.vocab.id_to_token.get(i)
            if token is None:
                raise ValidationError(f"token id {i} is out of vocabulary")
            chars.append(token)
        data = bytes(self.byte_decoder[c] for c in "".join(chars))
        return data.decode("utf-8", errors="replace")

    def token_string(self, token_id: int) -> str:
        token = self.vocab.id_to_token.get(token_id)
        if token is None:
            raise ValidationError(f"token id {token_id} is out of vocabulary")
        return token

    def _segment(self, piece: str) -> tuple[str, ...]:
        cached = self._segment_cache.get(piece)
        if cached is None:
            cached = self._bpe(tuple(self.byte_encoder[b] for b in piece.encode("utf-8")))
            self._segment_cache[piece] = cached
        return cached

    def _bpe(self, word: tuple[str, ...]) -> tuple[str, ...]:
        rank = self.merges.rank
        while len(word) >= 2:
            best = min(zip(word, word[1:]), key=lambda p: rank.get(p, _NO_RANK))
            if best not in rank:
                break
            word = _merge_pair(word, best)
        return word

    # -- stochastic encoding ---------------------------------------------

    def encode_with_merge_dropout(
        self,
        text: str,
        p_drop: float,
        rng,
        exempt_words: frozenset[str] | set[str] = frozenset(),
    ) -> TokenSeq:
        """Encode while skipping each recorded merge with probability `p_drop`.

        The deterministic merge sequence for each piece is replayed as a forest
        of merge events; every event draws one uniform variate from `rng` (in
        recording order) and is dropped when the draw falls below `p_drop`.  An
        event only takes effect if kept and both child segments were realized,
        so the output is always a refinement of the deterministic segmentation:
        never fewer tokens, identical at p_drop=0, single bytes at p_drop=1.
        Pieces equal to a word in `exempt_words` (with or without one leading
        space) are encoded deterministically and draw nothing.
        """
        if not 0.0 <= p_drop <= 1.0:
            raise ValidationError(f"p_drop must be in [0, 1], got {p_drop}")
        if p_drop == 0.0:
            return self.encode(text)
        ids: list[int] = []
        offsets: list[tuple[int, int]] = []
        pos = 0
        for piece in _PRETOKEN_PATTERN.findall(text):
            bare = piece[1:] if piece.startswith(" ") else piece
            if piece in exempt_words or bare in exempt_words:
                tokens = self._segment(piece)
            else:
                tokens = self._dropout_segment(piece, p_drop, rng)
            for token in tokens:
                ids.append(self.vocab.token_to_id[token])
                offsets.append((pos, pos + len(token)))
                pos += len(token)
        return TokenSeq(tuple(ids), tuple(offsets))

    def _merge_trace(self, piece: str) -> tuple[int, list[tuple[int, int]]]:
        """Record the greedy merge forest for one pre-token piece.

        Returns (leaf_count, events); event k merges nodes (left, right) into
        node leaf_count + k.  Leaves are numbered 0..leaf_count-1 in byte
        order and events are listed in application order.
        """
        cached = self._trace_cache.get(piece)
        if cached is not None:
            return cached
        symbols = [self.byte_encoder[b] for b in piece.encode("utf-8")]
        n = len(symbols)
        nodes = list(range(n))
        word = tuple(symbols)
        events: list[tuple[int, int]] = []
        rank = self.merges.rank
        while len(word) >= 2:
            best = min(zip(word, word[1:]), key=lambda p: rank.get(p, _NO_RANK))
            if best not in rank:
                break
            new_word: list[str] = []
            new_nodes: list[int] = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and (word[i], word[i + 1]) == best:
                    events.append((nodes[i], nodes[i + 1]))
                    new_word.append(word[i] + word[i + 1])
                    new_nodes.append(n + len(events) - 1)
                    i += 2
                else:
                    new_word.append(word[i])
                    new_nodes.append(nodes[i])
                    i += 1
            word = tuple(new_word)
            nodes = new_nodes
        self._trace_cache[piece] = (n, events)
        return n, events

    def _dropout_segment(self, piece: str, p_drop: float, rng) -> list[str]:
        n, events = self._merge_trace(piece)
        if not events:
            return [self.byte_encoder[b] for b in piece.encode("utf-8")]
        total = n + len(events)
        realized = [True] * n + [False] * len(events)
        parent = [-1] * total
        start = list(range(n)) + [0] * len(events)
        end = list(range(1, n + 1)) + [0] * len(events)
        for k, (left, right) in enumerate(events):
            node = n + k
            start[node] = start[left]
            end[node] = end[right]
            keep = rng.random() >= p_drop
            if keep and realized[left] and realized[right]:
                realized[node] = True
                parent[left] = node
                parent[right] = node
        mapped = [self.byte_encoder[b] for b in piece.encode("utf-8")]
        out: list[str] = []
        i = 0
        while i < n:
            node = i
            while parent[node] != -1:
                node = parent[node]
            out.append("".join(mapped[start[node] : end[node]]))
            i = end[node]
        return out


_NO_RANK = float("inf")


def _merge_pair(word: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(word):
        if i < len(word) - 1 and (word[i], word[i + 1]) == pair:
            out.append(word[i] + word[i + 1])
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def load_tokenizer(vocab_file: str, merges_file: str) -> Tokenizer:
    """Build a tokenizer from a JSON vocabulary and a merges listing.

    The merges file may start with one `#version` header line; every other
    non-empty line must contain exactly two space-separated symbols.  Parse
    and consistency problems raise ValidationError naming the offending line.
    """
    try:
        with open(vocab_file, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{vocab_file}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ValidationError(f"{vocab_file}: expected a JSON object at top level")
    for token, token_id in raw.items():
        if not isinstance(token_id, int) or isinstance(token_id, bool):
            raise ValidationError(f"{vocab_file}: id for token {token!r} is not an integer")
    vocab = Vocab(raw)

    pairs: list[tuple[str, str]] = []
    with open(merges_file, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if lineno == 1 and line.startswith("#version"):
                continue
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValidationError(
                    f"{merges_file}: line {lineno}: expected two space-separated symbols, got {line!r}"
                )
            pairs.append((parts[0], parts[1]))
    return Tokenizer(vocab, MergeRules(pairs))
