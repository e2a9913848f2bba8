"""Case-flip augmentation: flip rules, outcome classes, variants, statistics."""

import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cards.augment import (
    AugmentConfig,
    FlipDirection,
    OutcomeClass,
    OutcomeStats,
    augment_retokenization,
    augment_substitution_only,
    classify_outcome,
    classify_word,
    flip_direction,
    flip_first_letter,
    is_flippable,
    lowercase_transform,
    outcome_stats,
    switch_case,
    uppercase_first,
    word_repetition,
)
from cards.errors import ValidationError
from cards.tokenizer import load_tokenizer

from conftest import toy_vocab_and_merges, write_tokenizer_files


@pytest.fixture(scope="module")
def class_tokenizer(tmp_path_factory):
    """Toy tokenizer whose extra merges force one word per outcome class.

    cd   -> [cd] vs Cd -> [C, d]            division
    Cd   -> [C, d] vs cd -> [cd]            fusion
    abx  -> [ab, x] vs Abx -> [Ab, x]       substitution
    efg  -> [ef, g] vs Efg -> [E, fg]       regrouping
    """
    extra = [("c", "d"), ("a", "b"), ("A", "b"), ("e", "f"), ("f", "g")]
    vocab, merges = toy_vocab_and_merges(extra_merges=extra)
    directory = tmp_path_factory.mktemp("class_tok")
    return load_tokenizer(*write_tokenizer_files(directory, vocab, merges))


class TestFlipRules:
    def test_basic_flips(self):
        assert flip_first_letter("hello") == "Hello"
        assert flip_first_letter("Hello") == "hello"
        assert flip_first_letter("a") == "A"

    def test_unflippable_words_pass_through(self):
        for word in ["123", "!punct", "", " lead", "日本"]:
            assert not is_flippable(word)
            assert flip_first_letter(word) == word

    def test_sharp_s_is_not_flippable(self):
        # uppercasing expands to two characters, so the flip cannot be undone
        assert not is_flippable("ßeta")

    def test_titlecase_character_is_not_flippable(self):
        assert not is_flippable("ǅungla")

    def test_flip_is_an_involution(self):
        for word in ["hello", "Hello", "über", "Über", "zebra"]:
            assert flip_first_letter(flip_first_letter(word)) == word

    def test_direction(self):
        assert flip_direction("hello") is FlipDirection.LOWER_TO_UPPER
        assert flip_direction("Hello") is FlipDirection.UPPER_TO_LOWER
        with pytest.raises(ValidationError, match="not flippable"):
            flip_direction("123")


class TestOutcomeClassification:
    def test_division(self, class_tokenizer):
        record = classify_word(class_tokenizer, "cd")
        assert record.outcome is OutcomeClass.DIVISION
        assert len(record.original_tokens) == 1
        assert len(record.flipped_tokens) == 2
        assert record.direction is FlipDirection.LOWER_TO_UPPER

    def test_fusion(self, class_tokenizer):
        record = classify_word(class_tokenizer, "Cd")
        assert record.outcome is OutcomeClass.FUSION
        assert len(record.original_tokens) == 2
        assert len(record.flipped_tokens) == 1
        assert record.direction is FlipDirection.UPPER_TO_LOWER

    def test_substitution_multi_token(self, class_tokenizer):
        record = classify_word(class_tokenizer, "abx")
        assert record.outcome is OutcomeClass.SUBSTITUTION
        assert len(record.original_tokens) == len(record.flipped_tokens) == 2

    def test_substitution_single_token(self, class_tokenizer):
        assert classify_word(class_tokenizer, "q").outcome is OutcomeClass.SUBSTITUTION

    def test_regrouping(self, class_tokenizer):
        record = classify_word(class_tokenizer, "efg")
        assert record.outcome is OutcomeClass.REGROUPING
        # same token count but shifted boundary, so not a substitution
        assert len(record.original_tokens) == len(record.flipped_tokens) == 2

    def test_division_and_fusion_are_mirror_images(self, class_tokenizer):
        assert classify_word(class_tokenizer, "cd").outcome is OutcomeClass.DIVISION
        assert classify_word(class_tokenizer, "Cd").outcome is OutcomeClass.FUSION

    def test_unflippable_word_raises(self, class_tokenizer):
        with pytest.raises(ValidationError, match="not flippable"):
            classify_word(class_tokenizer, "123")

    def test_classify_outcome_rejects_empty(self, class_tokenizer):
        seq = class_tokenizer.encode("x")
        empty = class_tokenizer.encode("")
        with pytest.raises(ValidationError):
            classify_outcome(seq, empty)

    def test_real_vocabulary_examples(self, real_tokenizer):
        assert classify_word(real_tokenizer, "interpret").outcome is OutcomeClass.DIVISION
        assert classify_word(real_tokenizer, "Interpret").outcome is OutcomeClass.FUSION
        assert classify_word(real_tokenizer, "naturalistic").outcome is OutcomeClass.SUBSTITUTION
        assert classify_word(real_tokenizer, "Ongoing").outcome is OutcomeClass.REGROUPING


class TestSwitchCase:
    def test_p_zero_is_identity(self):
        config = AugmentConfig(p_sc=0.0)
        rng = np.random.default_rng(0)
        sentence = "Mixed Case words HERE"
        assert switch_case(sentence, config, rng) == sentence

    def test_p_one_flips_every_flippable_word(self):
        config = AugmentConfig(p_sc=1.0)
        rng = np.random.default_rng(0)
        assert switch_case("hello World 123", config, rng) == "Hello world 123"

    def test_whitespace_preserved_exactly(self):
        config = AugmentConfig(p_sc=1.0)
        out = switch_case("  a\t b \n", config, np.random.default_rng(0))
        assert out == "  A\t B \n"

    def test_one_draw_per_flippable_word(self):
        config = AugmentConfig(p_sc=0.5)
        rng = np.random.default_rng(7)
        switch_case("123 abc !@# def", config, rng)
        expected = np.random.default_rng(7)
        expected.random()
        expected.random()
        assert rng.random() == expected.random()

    def test_deterministic_under_seed(self):
        config = AugmentConfig(p_sc=0.5)
        sentence = "one Two three Four five Six seven"
        a = switch_case(sentence, config, np.random.default_rng(42))
        b = switch_case(sentence, config, np.random.default_rng(42))
        assert a == b

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60))
    def test_full_flip_is_an_involution(self, text):
        config = AugmentConfig(p_sc=1.0)
        once = switch_case(text, config, np.random.default_rng(0))
        twice = switch_case(once, config, np.random.default_rng(0))
        assert twice == text

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60), st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_shape_preserved(self, text, p_sc, seed):
        out = switch_case(text, AugmentConfig(p_sc=p_sc), np.random.default_rng(seed))
        assert len(out) == len(text)
        assert re.findall(r"\s+", out) == re.findall(r"\s+", text)


class TestSubstitutionOnly:
    def test_applies_only_substitution_flips(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0)
        out = augment_substitution_only(
            "cd abx efg", class_tokenizer, config, np.random.default_rng(0)
        )
        assert out == "cd Abx efg"

    def test_selection_stream_matches_switch_case(self, class_tokenizer):
        # same words are considered in the same order, so a downstream
        # consumer of the rng sees the same state either way
        config = AugmentConfig(p_sc=0.5)
        sentence = "cd 99 abx efg"
        rng_a = np.random.default_rng(13)
        rng_b = np.random.default_rng(13)
        switch_case(sentence, config, rng_a)
        augment_substitution_only(sentence, class_tokenizer, config, rng_b)
        assert rng_a.random() == rng_b.random()


class TestRetokenization:
    def test_p_zero_equals_plain_encoding(self, class_tokenizer):
        config = AugmentConfig(p_sc=0.0)
        sentence = "cd abx  efg hello"
        seq = augment_retokenization(sentence, class_tokenizer, config, np.random.default_rng(0))
        plain = class_tokenizer.encode(sentence)
        assert seq.ids == plain.ids and seq.offsets == plain.offsets

    def test_division_boundaries_forced_onto_original_spelling(self, real_tokenizer):
        config = AugmentConfig(p_sc=1.0)
        seq = augment_retokenization(
            "we interpret the data", real_tokenizer, config, np.random.default_rng(0)
        )
        strings = [real_tokenizer.token_string(i) for i in seq.ids]
        assert strings == ["we", "Ġinter", "pret", "Ġthe", "Ġdata"]
        assert real_tokenizer.decode(seq) == "we interpret the data"

    def test_substitution_words_keep_their_tokenization(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0)
        seq = augment_retokenization("abx", class_tokenizer, config, np.random.default_rng(0))
        plain = class_tokenizer.encode("abx")
        assert seq.ids == plain.ids

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60), st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_always_decodes_to_input(self, class_tokenizer, text, p_sc, seed):
        config = AugmentConfig(p_sc=p_sc)
        seq = augment_retokenization(text, class_tokenizer, config, np.random.default_rng(seed))
        assert class_tokenizer.decode(seq) == text

    def test_offsets_partition_input(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0)
        text = " cd efg\tabx "
        seq = augment_retokenization(text, class_tokenizer, config, np.random.default_rng(1))
        assert seq.offsets[0][0] == 0
        assert seq.offsets[-1][1] == len(text.encode("utf-8"))
        for prev, cur in zip(seq.offsets, seq.offsets[1:]):
            assert prev[1] == cur[0]


class TestSimpleTransforms:
    def test_lowercase_transform(self):
        assert lowercase_transform("MiXeD 123") == "mixed 123"
        assert lowercase_transform(lowercase_transform("ABC")) == "abc"

    def test_uppercase_first(self):
        assert uppercase_first("hello world") == "Hello world"
        assert uppercase_first("Hello") == "Hello"
        assert uppercase_first("") == ""
        assert uppercase_first("123 abc") == "123 abc"
        assert uppercase_first("ßeta") == "ßeta"

    def test_word_repetition_p_one(self):
        out = word_repetition("a b", 1.0, np.random.default_rng(0))
        assert out == "a a b b"

    def test_word_repetition_p_zero(self):
        assert word_repetition("a b c", 0.0, np.random.default_rng(0)) == "a b c"

    def test_word_repetition_invalid_prob(self):
        with pytest.raises(ValidationError, match="repeat_prob"):
            word_repetition("a", 1.5, np.random.default_rng(0))


class TestConfig:
    def test_p_sc_out_of_range(self):
        with pytest.raises(ValidationError, match="p_sc"):
            AugmentConfig(p_sc=-0.1)
        with pytest.raises(ValidationError, match="p_sc"):
            AugmentConfig(p_sc=1.01)

    def test_unknown_variant(self):
        with pytest.raises(ValidationError, match="variant"):
            AugmentConfig(variant="nonsense")

    def test_all_declared_variants_accepted(self):
        for variant in AugmentConfig._VARIANTS:
            AugmentConfig(variant=variant)


class TestOutcomeStats:
    def test_known_tiny_corpus(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0, seed=0)
        stats = outcome_stats(["cd abx", "efg Cd"], class_tokenizer, config)
        assert stats.total_selected == 4
        assert stats.percentage(OutcomeClass.DIVISION) == pytest.approx(25.0)
        assert stats.percentage(OutcomeClass.FUSION) == pytest.approx(25.0)
        assert stats.percentage(OutcomeClass.SUBSTITUTION) == pytest.approx(25.0)
        assert stats.percentage(OutcomeClass.REGROUPING) == pytest.approx(25.0)
        # division and fusion change the token count, the others here do not
        assert stats.changed_token_count_pct == pytest.approx(50.0)

    def test_direction_split(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0, seed=0)
        stats = outcome_stats(["cd Cd"], class_tokenizer, config)
        assert stats.percentage(OutcomeClass.DIVISION, FlipDirection.LOWER_TO_UPPER) == 50.0
        assert stats.percentage(OutcomeClass.DIVISION, FlipDirection.UPPER_TO_LOWER) == 0.0
        assert stats.percentage(OutcomeClass.FUSION, FlipDirection.UPPER_TO_LOWER) == 50.0

    def test_percentages_sum_to_hundred(self, class_tokenizer):
        config = AugmentConfig(p_sc=0.6, seed=3)
        sentences = ["cd abx efg hello Cd word Here"] * 40
        stats = outcome_stats(sentences, class_tokenizer, config)
        total = sum(stats.percentage(o) for o in OutcomeClass)
        assert total == pytest.approx(100.0)

    def test_thread_count_does_not_change_results(self, class_tokenizer):
        config = AugmentConfig(p_sc=0.4, seed=9)
        sentences = ["cd abx efg hello some Words here"] * 600
        single = outcome_stats(sentences, class_tokenizer, config, threads=1)
        multi = outcome_stats(sentences, class_tokenizer, config, threads=4)
        assert single.counts == multi.counts
        assert single.total_selected == multi.total_selected
        assert single.changed_token_count == multi.changed_token_count

    def test_deterministic_in_seed(self, class_tokenizer):
        config = AugmentConfig(p_sc=0.4, seed=9)
        sentences = ["cd abx efg hello"] * 50
        a = outcome_stats(sentences, class_tokenizer, config)
        b = outcome_stats(sentences, class_tokenizer, config)
        assert a.counts == b.counts

    def test_empty_corpus_raises(self, class_tokenizer):
        with pytest.raises(ValidationError, match="empty"):
            outcome_stats([], class_tokenizer, AugmentConfig())

    def test_no_flippable_words_raises(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0)
        with pytest.raises(ValidationError, match="selected"):
            outcome_stats(["123 456", "!!!"], class_tokenizer, config)

    def test_merge_adds_counts(self):
        a = OutcomeStats()
        a.add(OutcomeClass.DIVISION, FlipDirection.LOWER_TO_UPPER, True)
        b = OutcomeStats()
        b.add(OutcomeClass.DIVISION, FlipDirection.LOWER_TO_UPPER, False)
        b.add(OutcomeClass.FUSION, FlipDirection.UPPER_TO_LOWER, True)
        merged = a.merge(b)
        assert merged.total_selected == 3
        assert merged.counts[(OutcomeClass.DIVISION, FlipDirection.LOWER_TO_UPPER)] == 2
        assert merged.changed_token_count == 2

    def test_percentage_undefined_when_empty(self):
        with pytest.raises(ValidationError, match="undefined"):
            OutcomeStats().percentage(OutcomeClass.DIVISION)

    def test_tsv_has_eight_rows_and_footers(self, class_tokenizer):
        config = AugmentConfig(p_sc=1.0, seed=0)
        stats = outcome_stats(["cd abx"], class_tokenizer, config)
        lines = stats.to_tsv().splitlines()
        assert lines[0] == "outcome\tdirection\tcount\tpercentage"
        data = [l for l in lines[1:] if not l.startswith("#")]
        footers = [l for l in lines if l.startswith("#")]
        assert len(data) == 8
        assert len(footers) == 2
        assert footers[0].startswith("# total_selected\t")
        assert footers[1].startswith("# changed_token_count_pct\t")
