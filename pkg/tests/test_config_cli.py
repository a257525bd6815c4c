import csv
import wave

import numpy as np
import pytest

from btts.cli import run
from btts.config import ConfigError, ResolvedConfig, load_config, write_config
from btts.model import ModelConfig
from btts.signal import SignalConfig
from btts.toy import bundled_dir
from btts.training import TrainConfig


# config

def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("# nothing\n\n")
    cfg = load_config(p, env={})
    assert cfg == ResolvedConfig(SignalConfig(), ModelConfig(), TrainConfig())


def test_layering_and_echo(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("signal.griffin_lim_iters = 30\nmodel.prenet_dims = 64,32  # comment\ntrain.seed = 9\n")
    cfg = load_config(p, ["signal.griffin_lim_iters=60"], env={})
    assert cfg.signal.griffin_lim_iters == 60
    assert cfg.model.prenet_dims == (64, 32) and cfg.train.seed == 9
    echo = cfg.echo()
    assert "signal.griffin_lim_iters = 60\n" in echo
    write_config(cfg, tmp_path / "b.cfg")
    assert load_config(tmp_path / "b.cfg", env={}) == cfg


def test_seed_environment():
    cfg = load_config(None, ["train.seed=3"], env={"BTTS_SEED": "77"})
    assert cfg.model.seed == 77 and cfg.train.seed == 77
    with pytest.raises(ConfigError, match="BTTS_SEED"):
        load_config(None, env={"BTTS_SEED": "x"})


@pytest.mark.parametrize("override,field", [
    ("signal.hop_length=2048", "signal.hop_length"),
    ("signal.nope=1", "signal.nope"),
    ("bogus.key=1", "bogus.key"),
    ("model.gru_dim=abc", "model.gru_dim"),
    ("train.learning_rate=0", "train.learning_rate"),
    ("model.mel_bands=20", "model.mel_bands"),
])
def test_invalid_settings_named(override, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(None, [override], env={})


# cli

def test_usage_errors(capsys):
    assert run(["--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["eval-mos"]) == 1
    assert run(["normalize"]) == 1
    assert run(["prepare", "--metadata", "toy", "--cache", "x", "--set", "signal.hop_length=4096"]) == 1
    assert "signal.hop_length" in capsys.readouterr().err


def test_data_errors(tmp_path, capsys):
    assert run(["eval-mos", "--ratings", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "r.csv"
    bad.write_text("waveform_id,rater_id,rating\nw,r,9\n")
    assert run(["eval-mos", "--ratings", str(bad)]) == 2
    assert "r.csv:2" in capsys.readouterr().err


def test_eval_mos_fixture(tmp_path, capsys):
    out = tmp_path / "mos.csv"
    assert run(["-q", "eval-mos", "--ratings", "fixture", "--out", str(out), "--plot", str(tmp_path / "mos.png")]) == 0
    assert capsys.readouterr().out.strip() == "MOS 3.79"
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["waveform_id", "mos"] and len(rows) == 12
    assert (tmp_path / "mos.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_scores_fixture(capsys):
    assert run(["eval-scores", "--scores", "fixture", "-q"]) == 0
    assert capsys.readouterr().out.startswith("PESQ mean 0.77 ")


def test_chart_csv_and_png(tmp_path):
    out = tmp_path / "chart.csv"
    assert run(["chart", "--out", str(out), "--fixtures", "--ratings", "fixture", "--scores", "fixture",
                "--system", "mine", "-q"]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["system", "metric", "value"] and len(rows) == 11
    assert ["mine", "MOS", "3.79"] in rows and ["mine", "PESQ", "0.77"] in rows
    first = {p.name: p.read_bytes() for p in tmp_path.glob("*.png")}
    assert set(first) == {"chart-mos.png", "chart-pesq.png"}
    assert run(["chart", "--out", str(out), "--fixtures", "--ratings", "fixture", "--scores", "fixture",
                "--system", "mine", "-q"]) == 0
    assert {p.name: p.read_bytes() for p in tmp_path.glob("*.png")} == first


def test_chart_no_plots(tmp_path):
    assert run(["chart", "--out", str(tmp_path / "c.csv"), "--no-plots", "-q"]) == 0
    assert (tmp_path / "c.csv").read_text() == "system,metric,value\n"
    assert not list(tmp_path.glob("*.png"))


def test_normalize_and_stats(tmp_path, capsys):
    assert run(["normalize", "--text", "আমি ২০ টা"]) == 0
    assert capsys.readouterr().out == "আমি বিশ টা\n"
    src = tmp_path / "in.txt"
    src.write_text("১ ২\nডা. রহিম\n", encoding="utf-8")
    assert run(["normalize", "--in", str(src), "--out", str(tmp_path / "o.txt"), "-q"]) == 0
    assert (tmp_path / "o.txt").read_text(encoding="utf-8") == "এক দুই\nডাক্তার রহিম\n"
    assert run(["stats", "--metadata", "toy", "--filter", "--out", str(tmp_path / "s.csv"), "-q"]) == 0
    out = capsys.readouterr().out
    assert "total_sentences,48\n" in out
    assert (tmp_path / "s.csv").read_text().startswith("field,value\n")


def test_pipeline_small(tmp_path, capsys):
    cache, ck = tmp_path / "cache", tmp_path / "ck"
    quick = ["--config", "toy", "--set", "train.checkpoint_interval=2", "--set", "model.max_decoder_steps=8"]
    assert run(["prepare", "--metadata", "toy", "--cache", str(cache), "--workers", "2", "-q"] + quick) == 0
    assert (cache / "vocab.txt").exists() and len(list(cache.glob("*.bttc"))) == 48
    assert run(["train", "--metadata", "toy", "--cache", str(cache), "--out", str(ck), "--steps", "2", "-q"] + quick) == 0
    ckpt = ck / "checkpoint-0000002.btts"
    assert ckpt.exists() and (ck / "checkpoint-0000002-alignment.png").exists()
    assert len((ck / "train_log.csv").read_text().splitlines()) == 3

    wav = tmp_path / "a.wav"
    args = ["synthesize", "--text", "মা বাবা", "--checkpoint", str(ckpt), "--out", str(wav), "-q"]
    assert run(args) == 0
    with wave.open(str(wav)) as fh:
        assert fh.getnchannels() == 1 and fh.getsampwidth() == 2 and fh.getnframes() > 0
    assert run(args + ["--set", "model.gru_dim=7"]) == 1
    assert run(["synthesize", "--text", "xyz", "--checkpoint", str(ckpt), "--out", str(wav), "-q"]) == 2
    assert run(["align-export", "--text", "মা", "--checkpoint", str(ckpt), "--out", str(tmp_path / "al"), "-q"]) == 0
    a = np.loadtxt(tmp_path / "al.csv", delimiter=",", ndmin=2)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
    assert (tmp_path / "al.pgm").exists() and (tmp_path / "al.png").exists()

    assert run(["train", "--metadata", "toy", "--cache", str(cache), "--out", str(ck), "--steps", "1",
                "--resume", str(ckpt), "--set", "model.gru_dim=7", "-q"]) == 1
    err = capsys.readouterr().err
    assert "# resolved config" in err


def test_bundled_toy_files():
    d = bundled_dir()
    assert (d / "metadata.csv").exists() and (d / "toy.cfg").exists()
    assert len(list((d / "wavs").glob("*.wav"))) == 50
