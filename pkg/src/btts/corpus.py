"""Corpus ingestion: metadata, length filtering, statistics and the
per-utterance spectrogram feature cache."""

from __future__ import annotations

import io
import os
import re
import tempfile
import wave
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import signal as sig
from .binio import (RecordError, read_exact, read_str, read_tensor, read_u32, read_u64,
                    write_str, write_tensor, write_u32, write_u64)
from .signal import AudioBuffer, SignalConfig
from .textnorm import NormalizedText, Vocabulary, encode, normalize, word_count
from .wav import read_wav

CACHE_MAGIC = b"BTTC"
CACHE_VERSION = 1
CACHE_SUFFIX = ".bttc"

MIN_WORDS, MAX_WORDS = 4, 11

# ids become file names in the cache directory
_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class CorpusError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    raw_text: str
    normalized_text: NormalizedText
    audio_path: Optional[Path] = None
    duration: Optional[float] = None
    char_ids: Optional[List[int]] = None

    @property
    def word_count(self) -> int:
        return word_count(self.normalized_text)

    @property
    def text(self) -> str:
        return self.normalized_text.text


def _wav_duration(path: Path) -> float:
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def parse_metadata(lines: Iterable[str], wav_dir=None, rules=None, source="<metadata>") -> List[Utterance]:
    """Parse ``id|raw_text|normalized_text`` lines; blank lines are skipped.

    When the normalized field is absent it is generated from the raw text.
    Audio is looked up as ``<wav_dir>/<id>.wav``.
    """
    utts: List[Utterance] = []
    seen = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("|")
        if len(fields) not in (2, 3):
            raise CorpusError(f"{source}:{lineno}: expected 2 or 3 '|'-separated fields, got {len(fields)}")
        uid = fields[0].strip()
        if not _ID.match(uid):
            raise CorpusError(f"{source}:{lineno}: invalid utterance id {uid!r}")
        if uid in seen:
            raise CorpusError(f"{source}:{lineno}: duplicate id {uid!r} (first on line {seen[uid]})")
        seen[uid] = lineno
        raw = fields[1]
        if len(fields) == 3 and fields[2].strip():
            norm = NormalizedText(" ".join(fields[2].split()))
        else:
            norm = normalize(raw, rules)
        audio, duration = None, None
        if wav_dir is not None:
            candidate = Path(wav_dir) / f"{uid}.wav"
            if candidate.exists():
                audio = candidate
                duration = _wav_duration(candidate)
                if duration <= 0:
                    raise CorpusError(f"{source}:{lineno}: {candidate} holds no samples")
        utts.append(Utterance(uid, raw, norm, audio, duration))
    return utts


def load_metadata(path, wav_dir=None, rules=None) -> List[Utterance]:
    """Read a metadata file. ``wav_dir`` defaults to ``wavs/`` beside it."""
    path = Path(path)
    if wav_dir is None and (path.parent / "wavs").is_dir():
        wav_dir = path.parent / "wavs"
    with open(path, encoding="utf-8") as fh:
        return parse_metadata(fh, wav_dir, rules, source=str(path))


def filter_by_length(utts: Sequence[Utterance], lo: int = MIN_WORDS, hi: int = MAX_WORDS) -> List[Utterance]:
    """Keep utterances with ``lo <= word_count <= hi``, in input order."""
    return [u for u in utts if lo <= u.word_count <= hi]


def attach_char_ids(utts: Sequence[Utterance], vocab: Vocabulary) -> None:
    for u in utts:
        u.char_ids = encode(u.text, vocab)


# statistics

@dataclass(frozen=True)
class CorpusStats:
    total_sentences: int
    total_words: int
    total_unique_words: int
    min_words: int
    max_words: int
    avg_words: float
    total_duration: float
    avg_duration: float

    def check(self) -> "CorpusStats":
        """Assert the arithmetic relations between fields."""
        if self.total_sentences <= 0:
            raise CorpusError("statistics need at least one sentence")
        if not np.isclose(self.avg_words, self.total_words / self.total_sentences, rtol=1e-12):
            raise CorpusError("avg_words != total_words / total_sentences")
        if not np.isclose(self.avg_duration, self.total_duration / self.total_sentences, rtol=1e-12):
            raise CorpusError("avg_duration != total_duration / total_sentences")
        if not self.min_words <= self.avg_words <= self.max_words:
            raise CorpusError("avg_words outside [min_words, max_words]")
        if self.total_unique_words > self.total_words:
            raise CorpusError("more unique words than words")
        return self

    @classmethod
    def from_totals(cls, total_sentences: int, total_words: int, total_duration: float,
                    min_words: int, max_words: int, total_unique_words: int = 0) -> "CorpusStats":
        """Build (and check) stats from published totals rather than utterances."""
        return cls(total_sentences, total_words, total_unique_words, min_words, max_words,
                   total_words / total_sentences, float(total_duration),
                   total_duration / total_sentences).check()


def compute_stats(utts: Sequence[Utterance]) -> CorpusStats:
    """Table-style summary. Utterances without audio count as zero seconds."""
    if not utts:
        raise CorpusError("cannot compute statistics of an empty corpus")
    counts = [u.word_count for u in utts]
    unique = set()
    for u in utts:
        unique.update(u.text.split())
    total_words = sum(counts)
    total_duration = float(sum(u.duration or 0.0 for u in utts))
    n = len(utts)
    return CorpusStats(n, total_words, len(unique), min(counts), max(counts),
                       total_words / n, total_duration, total_duration / n).check()


def format_duration(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600}:{s % 3600 // 60:02d}:{s % 60:02d}"


# features

@dataclass
class FeatureEntry:
    id: str
    mel: np.ndarray      # frames x mel_bands, normalized dB
    linear: np.ndarray   # frames x n_bins, normalized dB
    fingerprint: int

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


def feature_fingerprint(cfg: SignalConfig, r: int) -> int:
    return cfg.fingerprint("features", int(r))


def features_from_audio(audio: AudioBuffer, cfg: SignalConfig, r: int = 1, uid: str = ""):
    """trim -> pre-emphasis -> STFT -> magnitude -> normalized dB targets.

    Frames are padded with the silence level (0 after normalization) up to
    a multiple of ``r``.
    """
    cfg.validate()
    if r < 1:
        raise CorpusError(f"reduction factor must be >= 1, got {r}")
    if audio.sample_rate != cfg.sample_rate:
        raise CorpusError(f"{uid or 'audio'}: sample rate {audio.sample_rate} != configured {cfg.sample_rate}")
    trimmed = sig.trim_silence(audio, cfg.trim_threshold_db, cfg.trim_frame_ms)
    if len(trimmed) == 0:
        raise CorpusError(f"{uid or 'audio'}: nothing left after silence trimming")
    mag = sig.magnitude(sig.stft(sig.preemphasis(trimmed, cfg.preemphasis_coeff), cfg))
    mel = sig.linear_to_mel(mag)
    linear_t = sig.normalize_db(mag.values, cfg)
    mel_t = sig.normalize_db(mel.values, cfg)
    pad = -mag.n_frames % r
    if pad:
        linear_t = np.pad(linear_t, ((0, pad), (0, 0)))
        mel_t = np.pad(mel_t, ((0, pad), (0, 0)))
    return FeatureEntry(uid, mel_t.astype(np.float32), linear_t.astype(np.float32),
                        feature_fingerprint(cfg, r))


def prepare_features(utt: Utterance, cfg: SignalConfig, r: int = 1) -> FeatureEntry:
    if utt.audio_path is None:
        raise CorpusError(f"{utt.id}: no audio file")
    return features_from_audio(read_wav(utt.audio_path), cfg, r, utt.id)


def encode_cache(entry: FeatureEntry) -> bytes:
    if entry.mel.shape[0] != entry.linear.shape[0]:
        raise CorpusError(f"{entry.id}: mel and linear frame counts differ")
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    write_u32(buf, CACHE_VERSION)
    write_str(buf, entry.id)
    write_u64(buf, entry.fingerprint)
    write_tensor(buf, entry.mel)
    write_tensor(buf, entry.linear)
    return buf.getvalue()


def cache_path(cache_dir, uid: str) -> Path:
    return Path(cache_dir) / f"{uid}{CACHE_SUFFIX}"


def write_cache(entry: FeatureEntry, cache_dir) -> Path:
    """Atomically create ``<cache_dir>/<id>.bttc``.

    The record goes to a private temporary file and is renamed into
    place, so concurrent writers of the same id never interleave and
    readers only ever see complete records.
    """
    path = cache_path(cache_dir, entry.id)
    fd, tmp = tempfile.mkstemp(prefix=f".{entry.id}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_cache(entry))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_cache(path, expected_fingerprint: Optional[int] = None) -> FeatureEntry:
    try:
        with open(path, "rb") as fh:
            if read_exact(fh, 4) != CACHE_MAGIC:
                raise CorpusError(f"{path}: not a feature cache (bad magic)")
            version = read_u32(fh)
            if version != CACHE_VERSION:
                raise CorpusError(f"{path}: unsupported cache version {version}")
            uid = read_str(fh)
            fp = read_u64(fh)
            mel = read_tensor(fh)
            linear = read_tensor(fh)
            if fh.read(1):
                raise CorpusError(f"{path}: trailing bytes")
    except RecordError as exc:
        raise CorpusError(f"{path}: {exc}") from exc
    if mel.ndim != 2 or linear.ndim != 2 or mel.shape[0] != linear.shape[0]:
        raise CorpusError(f"{path}: inconsistent tensor shapes {mel.shape} / {linear.shape}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise CorpusError(f"{path}: cache fingerprint does not match the current signal config")
    return FeatureEntry(uid, mel, linear, fp)


def _prepare_one(job):
    utt, cfg, r, cache_dir = job
    return write_cache(prepare_features(utt, cfg, r), cache_dir)


def prepare_corpus(utts: Sequence[Utterance], cfg: SignalConfig, r: int, cache_dir,
                   workers: int = 1) -> List[Path]:
    """Compute and cache features for every utterance, optionally in parallel."""
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(u, cfg, r, cache_dir) for u in utts]
    if workers <= 1 or len(jobs) < 2:
        return [_prepare_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_prepare_one, jobs))


def load_examples(utts: Sequence[Utterance], cache_dir, vocab: Vocabulary, cfg: SignalConfig, r: int):
    """Pair cached features with encoded text as training examples."""
    from .training import Example

    fp = feature_fingerprint(cfg, r)
    out = []
    for u in utts:
        entry = read_cache(cache_path(cache_dir, u.id), fp)
        if entry.id != u.id:
            raise CorpusError(f"{u.id}: cache record belongs to {entry.id!r}")
        ids = np.asarray(u.char_ids if u.char_ids is not None else encode(u.text, vocab))
        out.append(Example(ids, entry.mel, entry.linear, u.id))
    return out
