from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import List, Tuple

from .numbers import MAX_NUMBER, NumberFormatError, digits_to_words, number_to_words, parse_digits
from .rules import ASCII_TO_BANGLA, BANGLA_DIGITS, NormalizationRules, default_rules

_D = f"[{BANGLA_DIGITS}]"
# grouped forms (Indian 1,00,000 or Western 100,000) before plain digit runs
_NUMBER = re.compile(
    rf"{_D}{{1,2}}(?:,{_D}{{2}})*,{_D}{{3}}(?!{_D})"
    rf"|{_D}{{1,3}}(?:,{_D}{{3}})+(?!{_D})"
    rf"|{_D}+(?:\.{_D}+)?"
)
_MAX_PASSES = 4


@dataclass(frozen=True)
class Provenance:
    start: int
    end: int
    rule: str
    source: str
    replacement: str
    pass_index: int = 0


@dataclass
class NormalizedText:
    text: str
    provenance: List[Provenance] = field(default_factory=list)

    def __str__(self):
        return self.text

    def __len__(self):
        return len(self.text)


def is_bangla_letter(ch: str) -> bool:
    """Bangla-block letters, vowel signs and marks (digits excluded)."""
    return "ঀ" <= ch <= "৿" and ch not in BANGLA_DIGITS and ch not in "।৷"


def _word_char(ch: str) -> bool:
    return is_bangla_letter(ch) or ch.isalpha() or ch in "‌‍"


def _expand_number(token: str, rules: NormalizationRules) -> Tuple[str, str]:
    point = rules.units["point"]
    if "." in token:
        whole, frac = token.split(".", 1)
        return f"{_expand_number(whole, rules)[0]} {point} {digits_to_words(frac, rules)}", "decimal"
    plain = token.replace(",", "")
    if len(plain) > 1 and plain.startswith(BANGLA_DIGITS[0]):
        return digits_to_words(plain, rules), "digit-sequence"
    try:
        if parse_digits(plain) > MAX_NUMBER:
            raise NumberFormatError(plain)
        return number_to_words(plain, rules), "number"
    except NumberFormatError:
        return digits_to_words(plain, rules), "digit-sequence"


def _one_pass(text: str, rules: NormalizationRules, pass_index: int):
    abbrevs = sorted(rules.abbreviation_lexicon, key=len, reverse=True)
    punct = rules.punctuation_policy
    out: List[str] = []
    prov: List[Provenance] = []
    i, n = 0, len(text)

    def emit_word(word):
        if out and out[-1] != " " and _word_char(out[-1][-1]):
            out.append(" ")
        out.append(word)

    while i < n:
        ch = text[i]
        at_word_start = i == 0 or not _word_char(text[i - 1])

        m = _NUMBER.match(text, i)
        if m:
            src = m.group(0)
            words, rule = _expand_number(src, rules)
            emit_word(words)
            if m.end() < n and _word_char(text[m.end()]):
                out.append(" ")
            prov.append(Provenance(i, m.end(), rule, src, words, pass_index))
            i = m.end()
            continue

        hit = None
        for key in abbrevs:
            if not text.startswith(key, i):
                continue
            if _word_char(key[0]) and not at_word_start:
                continue
            end = i + len(key)
            if _word_char(key[-1]) and end < n and _word_char(text[end]):
                continue
            hit = key
            break
        if hit is not None:
            expansion = rules.abbreviation_lexicon[hit]
            emit_word(expansion)
            end = i + len(hit)
            if end < n and _word_char(text[end]):
                out.append(" ")
            prov.append(Provenance(i, end, "abbreviation", hit, expansion, pass_index))
            i = end
            continue

        if ch.isspace():
            if out and out[-1] != " ":
                out.append(" ")
        elif ch in punct:
            canon = punct[ch]
            if canon != ch:
                prov.append(Provenance(i, i + 1, "punctuation", ch, canon, pass_index))
            out.append(canon)
        elif is_bangla_letter(ch) or ch in "‌‍":
            out.append(ch)
        else:
            prov.append(Provenance(i, i + 1, "drop", ch, "", pass_index))
        i += 1

    result = re.sub(r"\s+", " ", "".join(out)).strip()
    return result, prov


def normalize(raw: str, rules: NormalizationRules | None = None) -> NormalizedText:
    """Convert raw text to its pronounceable form.

    Numbers and abbreviations are spelled out, retained punctuation is
    mapped to its canonical mark, anything else outside the Bangla block
    is dropped, and whitespace is collapsed. Every substitution or drop
    is recorded in ``provenance``. Rules are re-applied until the text
    stops changing, which makes the function idempotent.
    """
    rules = rules or default_rules()
    text = unicodedata.normalize("NFC", raw).translate(ASCII_TO_BANGLA)
    provenance: List[Provenance] = []
    for pass_index in range(_MAX_PASSES):
        new, prov = _one_pass(text, rules, pass_index)
        provenance += prov
        if new == text:
            break
        text = new
    return NormalizedText(text, provenance)


def word_count(text) -> int:
    return len(getattr(text, "text", text).split())
