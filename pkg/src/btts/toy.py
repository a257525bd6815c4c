"""Synthetic toy corpus: short Bangla sentences whose audio is a fixed
tone per character, so text maps to spectrogram patterns deterministically.

``python3 -m btts.toy <out_dir>`` regenerates the bundled copy.
"""

import sys
from pathlib import Path

import numpy as np

from .signal import AudioBuffer, SignalConfig
from .wav import write_wav

WORDS = ("মা", "বাবা", "জল", "ঘর", "বই", "কাজ", "দিন", "রাত", "নদী", "গান", "মন", "পথ")

TOY_SIGNAL = SignalConfig(sample_rate=8000, fft_size=256, win_length=256, hop_length=64,
                          mel_bands=20, trim_threshold_db=-40.0, trim_frame_ms=10.0)

CHAR_SECONDS = 0.016
SPACE_SECONDS = 0.016
EDGE_SECONDS = 0.05
FADE_SECONDS = 0.003


def alphabet():
    return sorted({ch for w in WORDS for ch in w})


def char_tone(ch: str, n: int, sr: int) -> np.ndarray:
    """Two partials at frequencies fixed by the character's alphabet slot."""
    k = alphabet().index(ch)
    f1 = 300.0 + 180.0 * k
    f2 = f1 * 2.5 if f1 * 2.5 < 0.45 * sr else f1 * 1.5
    t = np.arange(n) / sr
    tone = 0.35 * np.sin(2 * np.pi * f1 * t) + 0.15 * np.sin(2 * np.pi * f2 * t)
    fade = min(n // 2, int(FADE_SECONDS * sr))
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        tone[:fade] *= ramp
        tone[-fade:] *= ramp[::-1]
    return tone


def render(text: str, sr: int = TOY_SIGNAL.sample_rate) -> AudioBuffer:
    edge = np.zeros(int(EDGE_SECONDS * sr))
    parts = [edge]
    for i, word in enumerate(text.split()):
        if i:
            parts.append(np.zeros(int(SPACE_SECONDS * sr)))
        parts += [char_tone(ch, int(CHAR_SECONDS * sr), sr) for ch in word]
    parts.append(edge)
    return AudioBuffer(np.concatenate(parts), sr)


def sentences(n: int = 50, seed: int = 20):
    """``n`` sentences; the last two fall outside the 4..11 word window."""
    rng = np.random.default_rng(seed)
    lengths = list(rng.integers(4, 12, size=n - 2)) + [3, 12]
    return [" ".join(rng.choice(WORDS, size=k)) for k in lengths]


def generate(out_dir, n: int = 50, seed: int = 20) -> Path:
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, text in enumerate(sentences(n, seed)):
        uid = f"toy{i:03d}"
        write_wav(out / "wavs" / f"{uid}.wav", render(text))
        lines.append(f"{uid}|{text}|{text}\n")
    meta = out / "metadata.csv"
    meta.write_text("".join(lines), encoding="utf-8")
    return meta


def bundled_dir() -> Path:
    return Path(__file__).parent / "data" / "toy"


if __name__ == "__main__":
    print(generate(sys.argv[1] if len(sys.argv) > 1 else bundled_dir()))
