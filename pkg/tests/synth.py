"""Synthetic clustered corpus for end-to-end training checks.

The vocabulary is a closed set of two-letter lowercase words.  Each word `xy`
merges into a single token via (x, y) -> "xy" and ("Ġ", "xy") -> "Ġxy", and
pre-tokens never span words, so every sentence of W words encodes to exactly
W tokens and the mean-pooling encoder sees only the word multiset.

The corpus has 200 clusters.  A cluster owns a keyword and a fixed template
multiset (the keyword plus six filler words); its 5 training variants are
order shuffles of that template, so training mates encode identically and a
mate drawn as a negative contributes only zero-mean dropout noise.  Clusters
c and c+100 are partners: they share all six template fillers but differ in
keyword, which makes a partner's sentences the nearest non-mate neighbours of
every query by a wide margin.  A retrieved hard negative is therefore almost
always a shares-the-fillers, different-keyword sentence; separating such a
pair means shrinking the shared filler mass and pushing the two keywords
apart, which is exactly what the held-out evaluation measures.  A random
in-batch negative almost never supplies that contrast (other clusters share
about 0.2 filler words in expectation), so the no-retrieval control sees
essentially no usable gradient and the comparison isolates the hard-negative
path.

The held-out dev set scores cluster co-membership with the filler confound
held constant: cluster c contributes two unseen reduced variants, the keyword
doubled plus filler window pool[0:6] or pool[2:8], so the same-cluster pair
(gold 5.0) and the partner pairing (gold 0.0) both share exactly four fillers
and differ only in whether the keyword matches.  Ranking them apart is then
purely a question of how much keyword identity outweighs residual noise,
which is the quantity hard-negative training improves.
"""

from __future__ import annotations

import itertools
import json
import os
import string

import numpy as np

from cards.corpus import Sentence, StsExample
from cards.tokenizer import bytes_to_unicode

N_CLUSTERS = 200
N_PAIRS = N_CLUSTERS // 2
N_FILLERS = 240
TEMPLATE_FILLERS = 8
DEV_KEYWORD_REPEATS = 2
TRAIN_VARIANTS = 5

_WORDLIST_SEED = 417
_CORPUS_SEED = 417


def word_inventory() -> tuple[list[str], list[str]]:
    """Deterministic (keywords, fillers) split of the two-letter words."""
    words = ["".join(p) for p in itertools.product(string.ascii_lowercase, repeat=2)]
    rng = np.random.default_rng(_WORDLIST_SEED)
    order = rng.permutation(len(words))
    shuffled = [words[i] for i in order]
    return shuffled[:N_CLUSTERS], shuffled[N_CLUSTERS : N_CLUSTERS + N_FILLERS]


def write_word_tokenizer(directory: str) -> tuple[str, str]:
    """Write vocab/merges files covering every inventory word; return paths."""
    keywords, fillers = word_inventory()
    words = keywords + fillers
    byte_tokens = [bytes_to_unicode()[b] for b in range(256)]
    vocab: dict[str, int] = {tok: i for i, tok in enumerate(byte_tokens)}
    first_merges, second_merges = [], []
    for word in words:
        vocab[word] = len(vocab)
        vocab["Ġ" + word] = len(vocab)
        first_merges.append(f"{word[0]} {word[1]}")
        second_merges.append(f"Ġ {word}")
    vocab_path = os.path.join(directory, "vocab.json")
    merges_path = os.path.join(directory, "merges.txt")
    with open(vocab_path, "w", encoding="utf-8") as fh:
        json.dump(vocab, fh, ensure_ascii=False)
    with open(merges_path, "w", encoding="utf-8") as fh:
        fh.write("#version: synthetic\n")
        fh.write("\n".join(first_merges + second_merges) + "\n")
    return vocab_path, merges_path


def _partner(cluster: int) -> int:
    return (cluster + N_PAIRS) % N_CLUSTERS


def make_cluster_data() -> tuple[list[Sentence], list[StsExample]]:
    """Fixed 1000-sentence training corpus plus 400 held-out dev pairs."""
    keywords, fillers = word_inventory()
    rng = np.random.default_rng(_CORPUS_SEED)
    pools = [
        list(rng.choice(fillers, size=TEMPLATE_FILLERS, replace=False))
        for _ in range(N_PAIRS)
    ]
    templates = [[keywords[c]] + pools[c % N_PAIRS] for c in range(N_CLUSTERS)]
    train = []
    for c in range(N_CLUSTERS):
        for j in range(TRAIN_VARIANTS):
            words = list(templates[c])
            rng.shuffle(words)
            train.append(Sentence(id=c * TRAIN_VARIANTS + j, text=" ".join(words)))

    def reduced_variant(c: int, j: int) -> str:
        window = pools[c % N_PAIRS][0:6] if j == 0 else pools[c % N_PAIRS][2:8]
        words = [keywords[c]] * DEV_KEYWORD_REPEATS + window
        rng.shuffle(words)
        return " ".join(words)

    held_out = {(c, j): reduced_variant(c, j) for c in range(N_CLUSTERS) for j in (0, 1)}
    dev = []
    for c in range(N_CLUSTERS):
        dev.append(StsExample(held_out[(c, 0)], held_out[(c, 1)], 5.0))
        dev.append(StsExample(held_out[(c, 0)], held_out[(_partner(c), 1)], 0.0))
    return train, dev
