"""Mono 16-bit PCM WAV reading and writing."""

import wave

import numpy as np

from .signal import AudioBuffer


class WavFormatError(ValueError):
    """The file is not RIFF/WAVE mono 16-bit PCM."""


def read_wav(path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV ({fh.getcomptype()}) not supported")
            if fh.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioBuffer(pcm / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.clip(samples, -1.0, 1.0) * 32767.0)
    return scaled.astype("<i2")


def write_wav(path, audio: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(audio.sample_rate))
        fh.writeframes(to_pcm16(audio.samples).tobytes())
