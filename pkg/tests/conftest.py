"""Shared fixtures: bundled BPE files, the English sample, and a toy tokenizer."""

import gzip
import json
import os
import pathlib

import pytest

from cards.tokenizer import Tokenizer, bytes_to_unicode, load_tokenizer

DATA_DIR = pathlib.Path(__file__).parent / "data"

TOY_MERGES = [("h", "e"), ("l", "l"), ("he", "ll"), ("hell", "o")]


def toy_vocab_and_merges(extra_merges=()):
    """All 256 byte tokens plus a small merge chain; ids contiguous from 0."""
    byte_map = bytes_to_unicode()
    merges = TOY_MERGES + list(extra_merges)
    tokens = [byte_map[b] for b in range(256)] + [a + b for a, b in merges]
    return {t: i for i, t in enumerate(tokens)}, merges


def write_tokenizer_files(directory, vocab, merges):
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vocab_path = directory / "vocab.json"
    merges_path = directory / "merges.txt"
    vocab_path.write_text(json.dumps(vocab, ensure_ascii=False), encoding="utf-8")
    lines = ["#version: test"] + [f"{a} {b}" for a, b in merges]
    merges_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(vocab_path), str(merges_path)


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    vocab, merges = toy_vocab_and_merges()
    return write_tokenizer_files(tmp_path_factory.mktemp("toy_bpe"), vocab, merges)


@pytest.fixture(scope="session")
def toy_tokenizer(toy_files) -> Tokenizer:
    return load_tokenizer(*toy_files)


@pytest.fixture(scope="session")
def real_bpe_files():
    return str(DATA_DIR / "bpe" / "vocab.json"), str(DATA_DIR / "bpe" / "merges.txt")


@pytest.fixture(scope="session")
def real_tokenizer(real_bpe_files) -> Tokenizer:
    return load_tokenizer(*real_bpe_files)


@pytest.fixture(scope="session")
def english_sample() -> list[str]:
    """Bundled English sentences; override with CARDS_ENGLISH_SAMPLE=path."""
    override = os.environ.get("CARDS_ENGLISH_SAMPLE")
    if override:
        opener = gzip.open if override.endswith(".gz") else open
        with opener(override, "rt", encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f if line.strip()]
    with gzip.open(DATA_DIR / "english_sample.txt.gz", "rt", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]
