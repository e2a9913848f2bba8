"""Contrastive sentence-embedding learning with case-switched positives and
retrieved hard negatives, at desk scale."""

from .analysis import CaseClass, TokenLabel, bias_report, label_tokens, pca_2d
from .augment import (
    AugmentConfig,
    FlipDirection,
    OutcomeClass,
    OutcomeRecord,
    OutcomeStats,
    augment_retokenization,
    augment_substitution_only,
    classify_outcome,
    classify_word,
    flip_first_letter,
    is_flippable,
    lowercase_transform,
    outcome_stats,
    switch_case,
    uppercase_first,
    word_repetition,
)
from .corpus import Sentence, StsExample, clean_corpus, load_sts, read_corpus, truncate_tokens
from .encoder import (
    EncoderParams,
    GradBuffer,
    backward,
    forward,
    forward_pair,
    init_encoder_params,
    load_vectors,
    save_vectors,
)
from .errors import ContractViolation, ValidationError
from .objective import (
    LossValue,
    grad_info_nce,
    grad_info_nce_hard,
    info_nce,
    info_nce_hard,
    symmetric_kl,
)
from .pipeline import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    evaluate_sts,
    evaluate_sts_suite,
    fractional_ranks,
    load_checkpoint,
    save_checkpoint,
    spearman,
    train,
)
from .retrieval import (
    NegativeIndex,
    RetrievalConfig,
    attach_negatives,
    build_index,
    load_index,
    sample_negatives,
    save_index,
    top_k,
)
from .tokenizer import (
    MergeRules,
    TokenSeq,
    Tokenizer,
    Vocab,
    bytes_to_unicode,
    load_tokenizer,
)

__version__ = "0.1.0"
