import numpy as np
import pytest

from btts.model import ModelConfig
from btts.signal import SignalConfig

TINY = dict(vocab_size=8, embed_dim=4, prenet_dims=(6, 4), encoder_bank_K=2, conv_channels=3,
            highway_layers=1, gru_dim=3, attention_dim=3, decoder_layers=2, mel_bands=3,
            linear_bins=5, reduction_r=2, max_decoder_steps=12, seed=3)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture
def fast_signal():
    return SignalConfig(sample_rate=16000, fft_size=512, win_length=512, hop_length=128, mel_bands=40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def snr_db(ref, est):
    ref = np.asarray(ref, float)
    err = ref - np.asarray(est, float)
    return 10 * np.log10(np.sum(ref ** 2) / np.sum(err ** 2))


GL_F0 = (150.0, 220.0, 300.0, 350.0, 440.0)


def two_harmonic(f0, sr=16000, seconds=1.0):
    """Hann-enveloped fundamental plus phase-shifted second harmonic."""
    t = np.arange(int(sr * seconds)) / sr
    tone = 0.5 * np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(2 * np.pi * 2 * f0 * t + 0.7)
    return tone * np.hanning(t.size)


# one line per acceptance criterion, repeated together at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
