from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

PAD_ID = 0
EOS_ID = 1
RESERVED = ("<pad>", "<eos>")


class UnknownCharacterError(KeyError):
    def __init__(self, char: str, offset: int):
        self.char = char
        self.offset = offset
        super().__init__(f"character {char!r} (U+{ord(char):04X}) at offset {offset} is not in the vocabulary")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class Vocabulary:
    chars: tuple

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("vocabulary characters must be unique")
        for ch in self.chars:
            if len(ch) != 1:
                raise ValueError(f"vocabulary entries are single characters, got {ch!r}")

    def __len__(self):
        return len(self.chars) + len(RESERVED)

    @property
    def char_to_id(self) -> Dict[str, int]:
        return {ch: i + len(RESERVED) for i, ch in enumerate(self.chars)}

    def save(self, path) -> None:
        Path(path).write_text("".join(ch + "\n" for ch in self.chars), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocabulary(corpus: Iterable) -> Vocabulary:
    """Sorted set of every character in the corpus, after the reserved ids."""
    seen = set()
    for item in corpus:
        seen.update(getattr(item, "text", item))
    return Vocabulary(tuple(sorted(seen)))


def encode(text, vocab: Vocabulary) -> List[int]:
    """Character ids followed by the end-of-sequence id."""
    s = getattr(text, "text", text)
    table = vocab.char_to_id
    ids = []
    for offset, ch in enumerate(s):
        if ch not in table:
            raise UnknownCharacterError(ch, offset)
        ids.append(table[ch])
    ids.append(EOS_ID)
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    out = []
    for i in ids:
        if i in (PAD_ID, EOS_ID):
            continue
        out.append(vocab.chars[i - len(RESERVED)])
    return "".join(out)
