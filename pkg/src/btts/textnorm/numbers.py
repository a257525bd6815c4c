"""Cardinal number expansion in the Indian numbering system
(hundred / thousand / lakh / crore)."""

import re

from .rules import ASCII_TO_BANGLA, BANGLA_DIGITS, NormalizationRules, bangla_digits

MAX_NUMBER = 99_999_999  # 9,99,99,999
_INTEGER = re.compile(f"[{BANGLA_DIGITS}]+")


class NumberFormatError(ValueError):
    """Malformed or out-of-range number string."""


def parse_digits(number_string: str) -> int:
    s = number_string.strip().translate(ASCII_TO_BANGLA)
    if not _INTEGER.fullmatch(s):
        raise NumberFormatError(f"not an integer: {number_string!r}")
    return int(s.translate(str.maketrans(BANGLA_DIGITS, "0123456789")))


def number_to_words(number_string: str, rules: NormalizationRules) -> str:
    """Spell out an integer written in Bangla or ASCII digits.

    >>> number_to_words("২০", rules)   # doctest: +SKIP
    'বিশ'
    """
    n = parse_digits(number_string)
    if n > MAX_NUMBER:
        raise NumberFormatError(f"{number_string!r} exceeds {MAX_NUMBER}")
    lex, units = rules.digit_lexicon, rules.units
    if n == 0:
        return lex[bangla_digits(0)]
    words = []
    crore, rest = divmod(n, 10_000_000)
    lakh, rest = divmod(rest, 100_000)
    thousand, rest = divmod(rest, 1000)
    hundred, rest = divmod(rest, 100)
    for count, unit in ((crore, "crore"), (lakh, "lakh"), (thousand, "thousand"), (hundred, "hundred")):
        if count:
            words += [lex[bangla_digits(count)], units[unit]]
    if rest:
        words.append(lex[bangla_digits(rest)])
    return " ".join(words)


def digits_to_words(number_string: str, rules: NormalizationRules) -> str:
    """Read a digit string one digit at a time."""
    s = number_string.translate(ASCII_TO_BANGLA)
    return " ".join(rules.digit_lexicon[ch] for ch in s if ch in BANGLA_DIGITS)


def words_to_number(words: str, rules: NormalizationRules) -> int:
    """Inverse of :func:`number_to_words` for its own output."""
    table = rules.word_values()
    total, pending = 0, 0
    for token in words.split():
        if token not in table:
            raise NumberFormatError(f"unknown number word {token!r}")
        value = table[token]
        if token == rules.units["hundred"]:
            pending *= 100
            total += pending
            pending = 0
        elif value >= 1000 and token in rules.units.values():
            total += pending * value
            pending = 0
        else:
            pending += value
    return total + pending
