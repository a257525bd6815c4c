"""DSP kernels: framing, STFT/ISTFT, mel projection, pre-emphasis,
silence trimming and Griffin-Lim phase reconstruction.

All arithmetic runs in float64. Spectrogram matrices are stored
frames x bins (one row per analysis frame).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.signal import lfilter


class SignalError(ValueError):
    """Raised for invalid audio, configs or spectrogram arguments."""


@dataclass(frozen=True)
class SignalConfig:
    sample_rate: int = 48000
    fft_size: int = 2048
    win_length: int = 2048
    hop_length: int = 512
    mel_bands: int = 80
    preemphasis_coeff: float = 0.97
    griffin_lim_iters: int = 60
    ref_level_db: float = 20.0
    min_level_db: float = -100.0
    trim_threshold_db: float = -40.0
    trim_frame_ms: float = 10.0

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def validate(self) -> "SignalConfig":
        """Check every invariant; returns self so calls can be chained."""
        def bad(name, why):
            raise SignalError(f"signal.{name}: {why}")

        if self.sample_rate <= 0:
            bad("sample_rate", "must be positive")
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            bad("fft_size", "must be a power of two")
        if not 0 < self.win_length <= self.fft_size:
            bad("win_length", "must be in (0, fft_size]")
        if not 0 < self.hop_length <= self.win_length:
            bad("hop_length", "must be in (0, win_length]")
        # periodic Hann overlap-adds to a constant iff hop = win / k, k >= 2
        if self.win_length % self.hop_length or self.win_length // self.hop_length < 2:
            bad("hop_length", "win_length must be an integer multiple (>= 2) of hop_length")
        if not 0 < self.mel_bands < self.n_bins:
            bad("mel_bands", "must be in (0, fft_size/2 + 1)")
        if not 0.0 <= self.preemphasis_coeff < 1.0:
            bad("preemphasis_coeff", "must be in [0, 1)")
        if self.griffin_lim_iters < 1:
            bad("griffin_lim_iters", "must be >= 1")
        if self.min_level_db >= 0:
            bad("min_level_db", "must be negative")
        if self.trim_frame_ms <= 0:
            bad("trim_frame_ms", "must be positive")
        return self

    def fingerprint(self, *extra) -> int:
        """64-bit hash of the config (plus any extra values that shape derived data)."""
        blob = json.dumps([asdict(self), list(extra)], sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("audio contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class ComplexSpectrogram:
    values: np.ndarray
    config: SignalConfig
    n_samples: Optional[int] = None  # unpadded length of the analysed signal

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[1] != self.config.n_bins:
            raise SignalError(
                f"expected (frames, {self.config.n_bins}) matrix, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise SignalError("spectrogram contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class MagnitudeSpectrogram:
    values: np.ndarray
    config: SignalConfig
    scale: str = "linear"
    n_samples: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.scale not in ("linear", "mel"):
            raise SignalError(f"unknown scale {self.scale!r}")
        width = self.config.n_bins if self.scale == "linear" else self.config.mel_bands
        if self.values.ndim != 2 or self.values.shape[1] != width:
            raise SignalError(f"expected (frames, {width}) matrix, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise SignalError("magnitudes must be finite and nonnegative")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, win_length: int, hop_length: int) -> int:
    padded = n_samples + 2 * (win_length // 2)
    return 1 + (padded - win_length) // hop_length


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    # reflect padding needs more than `pad` samples; very short inputs get zeros
    mode = "reflect" if x.size > pad else "constant"
    return np.pad(x, pad, mode=mode)


def stft(audio: AudioBuffer, cfg: SignalConfig) -> ComplexSpectrogram:
    """Centered STFT with a Hann window; returns a frames x bins matrix."""
    cfg.validate()
    x = audio.samples
    if x.size == 0:
        raise SignalError("cannot analyse empty audio")
    return ComplexSpectrogram(_stft(x, cfg), cfg, n_samples=x.size)


def _stft(x: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    win, hop = cfg.win_length, cfg.hop_length
    xp = _pad(x, win // 2)
    n_frames = 1 + (xp.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * hann_window(win)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def _window_sumsquare(n_frames: int, cfg: SignalConfig) -> np.ndarray:
    win, hop = cfg.win_length, cfg.hop_length
    w2 = hann_window(win) ** 2
    total = np.zeros((n_frames - 1) * hop + win)
    for t in range(n_frames):
        total[t * hop:t * hop + win] += w2
    return total


def _istft(values: np.ndarray, cfg: SignalConfig, length: Optional[int]) -> np.ndarray:
    win, hop = cfg.win_length, cfg.hop_length
    n_frames = values.shape[0]
    frames = np.fft.irfft(values, n=cfg.fft_size, axis=1)[:, :win] * hann_window(win)
    out = np.zeros((n_frames - 1) * hop + win)
    for t in range(n_frames):
        out[t * hop:t * hop + win] += frames[t]
    wss = _window_sumsquare(n_frames, cfg)
    start = win // 2
    if length is None:
        length = (n_frames - 1) * hop
    stop = start + length
    if stop > out.size:
        raise SignalError(f"{n_frames} frames cannot cover {length} samples")
    region = wss[start:stop]
    if np.any(region < 1e-10):
        raise SignalError("window sum vanishes inside the signal; config is not overlap-add complete")
    return out[start:stop] / region


def istft(spec: ComplexSpectrogram, length: Optional[int] = None) -> AudioBuffer:
    """Least-squares overlap-add inverse of :func:`stft`.

    The output length defaults to the length recorded on ``spec`` (so a round
    trip returns exactly as many samples as went in), else ``(frames-1)*hop``.
    """
    cfg = spec.config
    if length is None:
        length = spec.n_samples
    return AudioBuffer(_istft(spec.values, cfg, length), cfg.sample_rate)


def magnitude(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(spec.values), spec.config, "linear", spec.n_samples)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: SignalConfig) -> np.ndarray:
    """Triangular HTK-mel filters, shape (mel_bands, n_bins).

    Filters peak at 1 and overlap by half, so the weights at any frequency
    bin sum to at most 1.
    """
    n_mels = cfg.mel_bands
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (centre - lower)
    falling = (upper - freqs[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise SignalError(
            f"mel filters {empty.tolist()} cover no FFT bin; reduce mel_bands or raise fft_size")
    return fb


def linear_to_mel(mag: MagnitudeSpectrogram) -> MagnitudeSpectrogram:
    if mag.scale != "linear":
        raise SignalError(f"expected a linear-scale spectrogram, got {mag.scale!r}")
    fb = mel_filterbank(mag.config)
    return MagnitudeSpectrogram(mag.values @ fb.T, mag.config, "mel", mag.n_samples)


def _check_coeff(coeff):
    if not 0.0 <= coeff < 1.0:
        raise SignalError(f"pre-emphasis coefficient {coeff} outside [0, 1)")


def preemphasis(audio: AudioBuffer, coeff: float) -> AudioBuffer:
    """y[n] = x[n] - coeff * x[n-1]."""
    _check_coeff(coeff)
    x = audio.samples
    y = x.copy()
    y[1:] -= coeff * x[:-1]
    return AudioBuffer(y, audio.sample_rate)


def inverse_preemphasis(audio: AudioBuffer, coeff: float) -> AudioBuffer:
    _check_coeff(coeff)
    return AudioBuffer(lfilter([1.0], [1.0, -coeff], audio.samples), audio.sample_rate)


def trim_silence(audio: AudioBuffer, threshold_db: float = -40.0,
                 frame_ms: float = 10.0) -> AudioBuffer:
    """Drop leading and trailing frames whose RMS (dBFS) is below ``threshold_db``.

    The result is always a contiguous slice of the input. An all-silent
    buffer comes back empty; callers decide what that means.
    """
    x = audio.samples
    if x.size == 0:
        raise SignalError("cannot trim empty audio")
    flen = max(1, int(round(audio.sample_rate * frame_ms / 1000.0)))
    n_frames = -(-x.size // flen)
    padded = np.zeros(n_frames * flen)
    padded[:x.size] = x
    rms = np.sqrt(np.mean(padded.reshape(n_frames, flen) ** 2, axis=1))
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(rms)
    loud = np.flatnonzero(level >= threshold_db)
    if loud.size == 0:
        return AudioBuffer(x[:0], audio.sample_rate)
    start = loud[0] * flen
    stop = min((loud[-1] + 1) * flen, x.size)
    return AudioBuffer(x[start:stop], audio.sample_rate)


def spectral_convergence(estimate: MagnitudeSpectrogram | np.ndarray,
                         target: MagnitudeSpectrogram | np.ndarray) -> float:
    """||estimate - target||_F / ||target||_F."""
    est = getattr(estimate, "values", estimate)
    tgt = getattr(target, "values", target)
    if est.shape != tgt.shape:
        raise SignalError(f"shape mismatch {est.shape} vs {tgt.shape}")
    denom = np.linalg.norm(tgt)
    if denom == 0.0:
        raise SignalError("spectral convergence is undefined for an all-zero target")
    return float(np.linalg.norm(est - tgt) / denom)


@dataclass
class GriffinLimResult:
    audio: AudioBuffer
    convergence: List[float] = field(default_factory=list)


def griffin_lim(mag: MagnitudeSpectrogram, cfg: Optional[SignalConfig] = None,
                n_iter: Optional[int] = None, length: Optional[int] = None,
                return_trace: bool = False):
    """Recover a waveform from a linear magnitude spectrogram.

    Starts from zero phase and alternates ISTFT / STFT projections
    ``n_iter`` times (``cfg.griffin_lim_iters`` by default). With
    ``return_trace`` the per-iteration spectral convergence of the
    iterate is returned alongside the audio.
    """
    if mag.scale != "linear":
        raise SignalError(f"Griffin-Lim needs a linear-scale spectrogram, got {mag.scale!r}")
    cfg = (cfg or mag.config).validate()
    if mag.values.shape[1] != cfg.n_bins:
        raise SignalError("magnitude width does not match config")
    n_iter = cfg.griffin_lim_iters if n_iter is None else n_iter
    if n_iter < 1:
        raise SignalError("need at least one Griffin-Lim iteration")
    if length is None:
        length = mag.n_samples if mag.n_samples is not None else (mag.n_frames - 1) * cfg.hop_length

    target = mag.values
    norm = np.linalg.norm(target)
    phase = np.ones_like(target, dtype=np.complex128)
    trace = []
    audio = np.zeros(length)
    for _ in range(n_iter):
        audio = _istft(target * phase, cfg, length)
        rebuilt = _stft(audio, cfg)
        if norm > 0:
            trace.append(float(np.linalg.norm(np.abs(rebuilt) - target) / norm))
        else:
            trace.append(0.0)
        phase = np.exp(1j * np.angle(rebuilt))
    result = GriffinLimResult(AudioBuffer(audio, cfg.sample_rate), trace)
    return result if return_trace else result.audio


# magnitude compression for model targets

def amp_to_db(x):
    return 20.0 * np.log10(np.maximum(1e-5, x))


def db_to_amp(x):
    return np.power(10.0, np.asarray(x) / 20.0)


def normalize_db(mag: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Amplitude -> dB relative to ref_level_db, mapped onto [0, 1]."""
    s = amp_to_db(mag) - cfg.ref_level_db
    return np.clip((s - cfg.min_level_db) / -cfg.min_level_db, 0.0, 1.0)


def denormalize_db(norm: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    s = np.clip(norm, 0.0, 1.0) * -cfg.min_level_db + cfg.min_level_db
    return db_to_amp(s + cfg.ref_level_db)


def write_spectrogram_csv(values: np.ndarray, path) -> None:
    """One row per frame, one column per bin."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(values):
            writer.writerow([repr(float(v)) for v in row])


def read_spectrogram_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=np.float64)
