"""Bangla text normalization and character encoding."""

from .normalize import NormalizedText, Provenance, normalize, word_count
from .numbers import NumberFormatError, number_to_words, words_to_number
from .rules import NormalizationRules, default_rules, load_rules, read_lexicon
from .vocab import (EOS_ID, PAD_ID, UnknownCharacterError, Vocabulary, build_vocabulary,
                    decode, encode)

__all__ = [
    "NormalizedText", "Provenance", "normalize", "word_count",
    "NumberFormatError", "number_to_words", "words_to_number",
    "NormalizationRules", "default_rules", "load_rules", "read_lexicon",
    "EOS_ID", "PAD_ID", "UnknownCharacterError", "Vocabulary", "build_vocabulary",
    "decode", "encode",
]
