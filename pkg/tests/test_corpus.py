import numpy as np
import pytest

from btts import corpus as C
from btts.corpus import (CorpusError, CorpusStats, compute_stats, feature_fingerprint, features_from_audio,
                         filter_by_length, format_duration, load_metadata, parse_metadata, prepare_corpus,
                         prepare_features, read_cache, write_cache)
from btts.signal import AudioBuffer, SignalConfig
from btts.textnorm import NormalizedText, build_vocabulary
from btts.toy import bundled_dir
from btts.wav import write_wav

WORDS = ["আমি", "ভাত", "খাই", "তুমি", "বাড়ি", "যাও", "সে", "বই", "পড়ে", "নদী"]


def utt(uid, n_words, r=None, duration=None):
    r = r or np.random.default_rng(0)
    text = " ".join(str(r.choice(WORDS)) for _ in range(n_words))
    return C.Utterance(uid, text, NormalizedText(text), duration=duration)


# metadata

def test_load_metadata_cases(tmp_path):
    p = tmp_path / "metadata.csv"
    p.write_text("", encoding="utf-8")
    assert load_metadata(p) == []
    p.write_text("a1|আমি ২ টা ভাত খাই|\nb2|তুমি যাও\n\nc3|সে|সে বই পড়ে\n", encoding="utf-8")
    utts = load_metadata(p)
    assert [u.id for u in utts] == ["a1", "b2", "c3"]
    assert utts[0].text == "আমি দুই টা ভাত খাই"
    assert utts[2].text == "সে বই পড়ে" and utts[2].raw_text == "সে"
    assert all(u.audio_path is None for u in utts)


def test_metadata_errors():
    with pytest.raises(CorpusError, match="'a1'"):
        parse_metadata(["a1|x", "b|y", "a1|z"])
    with pytest.raises(CorpusError, match=":2:"):
        parse_metadata(["a1|x", "only-one-field"])
    with pytest.raises(CorpusError, match=":1:"):
        parse_metadata(["a|b|c|d"])
    with pytest.raises(CorpusError, match="id"):
        parse_metadata(["../evil|x"])


def test_metadata_reads_durations(tmp_path):
    (tmp_path / "wavs").mkdir()
    write_wav(tmp_path / "wavs" / "x1.wav", AudioBuffer(np.zeros(8000), 16000))
    (tmp_path / "metadata.csv").write_text("x1|আমি\nx2|তুমি\n", encoding="utf-8")
    a, b = load_metadata(tmp_path / "metadata.csv")
    assert a.duration == 0.5 and a.audio_path.name == "x1.wav"
    assert b.duration is None and b.audio_path is None


# filtering

@pytest.mark.parametrize("n,kept", [(3, False), (4, True), (11, True), (12, False)])
def test_filter_boundaries(n, kept):
    assert bool(filter_by_length([utt("u", n)])) == kept


def test_filter_matches_brute_force():
    r = np.random.default_rng(4)
    utts = [utt(f"u{i}", int(r.integers(1, 16)), r) for i in range(100)]
    expected = []
    for u in utts:
        n = len(u.text.split())
        if n > 3 and n < 12:
            expected.append(u)
    got = filter_by_length(utts)
    assert got == expected
    assert filter_by_length(got) == got
    assert all(any(g is u for u in utts) for g in got)


# statistics

def test_stats_against_brute_force():
    r = np.random.default_rng(9)
    utts = [utt(f"s{i}", int(r.integers(1, 9)), r, duration=float(r.uniform(0.5, 4))) for i in range(5)]
    s = compute_stats(utts)
    words = [w for u in utts for w in u.text.split()]
    assert s.total_sentences == 5
    assert s.total_words == len(words)
    assert s.total_unique_words == len(set(words))
    assert s.min_words == min(len(u.text.split()) for u in utts)
    assert s.max_words == max(len(u.text.split()) for u in utts)
    assert s.avg_words == pytest.approx(len(words) / 5)
    assert s.total_duration == pytest.approx(sum(u.duration for u in utts))
    assert s.avg_duration == pytest.approx(s.total_duration / 5)


def test_stats_unique_is_case_sensitive():
    a = C.Utterance("a", "Word word", NormalizedText("Word word"))
    assert compute_stats([a]).total_unique_words == 2


def test_stats_errors():
    with pytest.raises(CorpusError):
        compute_stats([])
    with pytest.raises(CorpusError):
        CorpusStats(2, 10, 3, 1, 4, 5.0, 2.0, 1.0).check()  # avg above max


def test_published_table_totals():
    s = CorpusStats.from_totals(12537, 122627, 20 * 3600 + 14 * 60 + 21, min_words=3, max_words=20)
    assert f"{s.avg_words:.2f}" == "9.78"
    assert f"{s.avg_duration:.2f}" == "5.81"
    assert s.total_duration == 72861
    assert format_duration(s.total_duration) == "20:14:21"


# features

def burst(r, sr, lead_frames, loud_frames, tail_frames, frame=160):
    """Silence / noise / silence aligned to 10 ms trim frames."""
    x = np.zeros((lead_frames + loud_frames + tail_frames) * frame)
    x[lead_frames * frame:(lead_frames + loud_frames) * frame] = r.uniform(-0.5, 0.5, loud_frames * frame)
    return AudioBuffer(x, sr), loud_frames * frame


def test_feature_frames_recomputed(fast_signal):
    r = np.random.default_rng(1)
    for _ in range(10):
        red = int(r.integers(1, 4))
        audio, n_loud = burst(r, 16000, int(r.integers(0, 10)), int(r.integers(5, 40)), int(r.integers(0, 10)))
        e = features_from_audio(audio, fast_signal, red)
        frames = 1 + n_loud // fast_signal.hop_length
        frames += -frames % red
        assert e.mel.shape == (frames, fast_signal.mel_bands)
        assert e.linear.shape == (frames, fast_signal.fft_size // 2 + 1)
        assert e.mel.dtype == np.float32
        assert 0 <= e.mel.min() and e.linear.max() <= 1


def test_feature_errors(fast_signal):
    with pytest.raises(CorpusError, match="trimming"):
        features_from_audio(AudioBuffer(np.zeros(16000), 16000), fast_signal)
    with pytest.raises(CorpusError, match="sample rate"):
        features_from_audio(AudioBuffer(np.ones(100), 8000), fast_signal)
    with pytest.raises(CorpusError, match="no audio"):
        prepare_features(utt("n", 4), fast_signal)


def test_fingerprint_tracks_config():
    base = SignalConfig()
    assert feature_fingerprint(base, 2) == feature_fingerprint(SignalConfig(), 2)
    assert feature_fingerprint(base, 2) != feature_fingerprint(SignalConfig(hop_length=base.hop_length // 2), 2)
    assert feature_fingerprint(base, 2) != feature_fingerprint(base, 3)


# cache

def test_cache_round_trip_and_rerun_identical(tmp_path):
    src = bundled_dir()
    utts = load_metadata(src / "metadata.csv")[:4]
    sig = SignalConfig(sample_rate=8000, fft_size=256, win_length=256, hop_length=64, mel_bands=20)
    first = prepare_corpus(utts, sig, 2, tmp_path / "a", workers=2)
    second = prepare_corpus(utts, sig, 2, tmp_path / "b", workers=1)
    for p, q in zip(first, second):
        assert p.read_bytes() == q.read_bytes()
    entry = read_cache(first[0], feature_fingerprint(sig, 2))
    assert entry.id == utts[0].id and entry.n_frames % 2 == 0
    again = prepare_features(utts[0], sig, 2)
    assert np.array_equal(entry.mel, again.mel) and np.array_equal(entry.linear, again.linear)

    vocab = build_vocabulary(u.normalized_text for u in utts)
    exs = C.load_examples(utts, tmp_path / "a", vocab, sig, 2)
    assert [e.id for e in exs] == [u.id for u in utts]
    assert exs[0].char_ids[-1] == 1


def test_cache_errors(tmp_path):
    e = C.FeatureEntry("x", np.zeros((4, 3), np.float32), np.zeros((4, 5), np.float32), 42)
    path = write_cache(e, tmp_path)
    assert read_cache(path).fingerprint == 42
    with pytest.raises(CorpusError, match="fingerprint"):
        read_cache(path, 41)
    data = path.read_bytes()
    bad = tmp_path / "bad.bttc"
    for blob, msg in ((b"XXXX" + data[4:], "magic"), (data[:-3], None), (data + b"!", "trailing")):
        bad.write_bytes(blob)
        with pytest.raises(CorpusError, match=msg):
            read_cache(bad)
    with pytest.raises(CorpusError):
        write_cache(C.FeatureEntry("y", np.zeros((4, 3), np.float32), np.zeros((5, 5), np.float32), 1), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.bttc", "x.bttc"]
