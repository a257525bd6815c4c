"""Rule tables for text normalization, loaded from editable TSV lexicons."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional

BANGLA_DIGITS = "০১২৩৪৫৬৭৮৯"
ASCII_TO_BANGLA = str.maketrans("0123456789", BANGLA_DIGITS)
DEFAULT_PUNCTUATION = ("।", ",", "?", "!", "-")


class LexiconError(ValueError):
    pass


def read_lexicon(path) -> Dict[str, str]:
    """Parse ``key<TAB>value`` lines; ``#`` starts a comment line.

    Keys and values are NFC-normalized. Duplicate keys are an error.
    """
    table: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise LexiconError(f"{path}:{lineno}: expected key<TAB>value")
        key, value = line.split("\t", 1)
        key = unicodedata.normalize("NFC", key)
        value = unicodedata.normalize("NFC", value.strip())
        if not key:
            raise LexiconError(f"{path}:{lineno}: empty key")
        if key in table:
            raise LexiconError(f"{path}:{lineno}: duplicate key {key!r}")
        table[key] = value
    return table


@dataclass(frozen=True)
class NormalizationRules:
    digit_lexicon: Mapping[str, str]
    units: Mapping[str, str]
    abbreviation_lexicon: Mapping[str, str]
    punctuation_policy: Mapping[str, str]
    _inverse: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("hundred", "thousand", "lakh", "crore", "point"):
            if name not in self.units:
                raise LexiconError(f"units lexicon lacks {name!r}")
        for n in range(100):
            if bangla_digits(n) not in self.digit_lexicon:
                raise LexiconError(f"number lexicon lacks {n}")
        self._check_closure()

    def _check_closure(self):
        expansions = list(self.digit_lexicon.values()) + list(self.units.values())
        expansions += list(self.abbreviation_lexicon.values())
        for text in expansions:
            if any(ch in BANGLA_DIGITS or ch.isdigit() for ch in text):
                raise LexiconError(f"expansion {text!r} contains a digit")
            for key in self.abbreviation_lexicon:
                if key in text.split() or (not key[-1].isalpha() and key in text):
                    raise LexiconError(f"expansion {text!r} contains abbreviation {key!r}")

    @property
    def retained_punctuation(self) -> frozenset:
        return frozenset(self.punctuation_policy.values())

    def word_values(self) -> Dict[str, int]:
        """Inverse table: number word -> value (units map to their multiplier)."""
        if not self._inverse:
            inv = {word: int(key.translate(str.maketrans(BANGLA_DIGITS, "0123456789")))
                   for key, word in self.digit_lexicon.items() if len(key) <= 2}
            for name, mult in (("hundred", 100), ("thousand", 1000),
                               ("lakh", 100_000), ("crore", 10_000_000)):
                inv[self.units[name]] = mult
            self._inverse.update(inv)
        return self._inverse


def bangla_digits(n: int) -> str:
    return str(n).translate(ASCII_TO_BANGLA)


def _bundled(name: str) -> Path:
    return Path(str(resources.files("btts.textnorm") / "lexicons" / name))


def load_rules(lexicon_dir: Optional[str] = None,
               punctuation: Optional[Mapping[str, str]] = None) -> NormalizationRules:
    """Load the four lexicons from ``lexicon_dir`` (bundled ones by default)."""
    def path(name):
        if lexicon_dir is not None and (Path(lexicon_dir) / name).exists():
            return Path(lexicon_dir) / name
        return _bundled(name)

    punct = punctuation if punctuation is not None else read_lexicon(path("punctuation.tsv"))
    return NormalizationRules(
        digit_lexicon=read_lexicon(path("numbers.tsv")),
        units=read_lexicon(path("units.tsv")),
        abbreviation_lexicon=read_lexicon(path("abbreviations.tsv")),
        punctuation_policy=punct,
    )


_DEFAULT: Optional[NormalizationRules] = None


def default_rules() -> NormalizationRules:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_rules()
    return _DEFAULT
