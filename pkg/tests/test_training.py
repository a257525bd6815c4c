import numpy as np
import pytest

from btts.model import ForwardOutput, ModelConfig, init_params, param_schema
from btts.signal import SignalConfig
from btts.training import (CheckpointError, Example, TrainConfig, TrainState, TrainingError,
                           alignment_diagonality, backward, clip_by_global_norm, export_alignment,
                           finite_difference_check, global_norm, load_checkpoint, loss, loss_percent,
                           read_alignment_csv, read_pgm, save_checkpoint, train, train_step)
from conftest import TINY


def examples(cfg, n=6, seed=0):
    r = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(r.integers(2, 6))
        frames = cfg.reduction_r * int(r.integers(1, 4))
        ids = np.append(r.integers(2, cfg.vocab_size, size=T), 1)
        out.append(Example(ids, r.random((frames, cfg.mel_bands)), r.random((frames, cfg.linear_bins)), f"e{i}"))
    return out


def fresh_state(cfg, **train_kw):
    tc = TrainConfig(**{"learning_rate": 0.01, "batch_size": 2, "max_steps": 6, "checkpoint_interval": 3,
                        "seed": 5, **train_kw})
    return TrainState(init_params(cfg), tc, SignalConfig(), vocab=("a", "b"))


# loss

def out_of(mel, linear):
    return ForwardOutput(mel, linear, np.ones((1, 1)), 1)


def test_loss_hand_cases(rng):
    m, lin = rng.random((4, 3)), rng.random((4, 5))
    assert loss(out_of(m, lin), m, lin) == 0.0
    assert loss(out_of(np.array([[0.5]]), np.array([[0.25]])), np.zeros((1, 1)), np.zeros((1, 1))) == pytest.approx(0.75)
    d1, d2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 5))
    assert loss(out_of(m + d1, lin + d2), m, lin) == pytest.approx(loss(out_of(m - d1, lin - d2), m, lin))


def test_loss_percent():
    assert loss_percent(0.5, np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]])) == pytest.approx(25.0)
    assert np.isnan(loss_percent(0.5, np.zeros((1, 1)), np.zeros((1, 1))))


# gradients

def test_gradients_shapes_and_finite(tiny_cfg):
    p = init_params(tiny_cfg)
    ex = examples(tiny_cfg, 1)[0]
    value, grads, align = backward(ex.char_ids, (ex.mel, ex.linear), p, rng=np.random.default_rng(0))
    assert np.isfinite(value)
    assert set(grads) == {n for n, _ in param_schema(tiny_cfg)}
    for name, arr in grads.items():
        assert arr.shape == p.tensors[name].shape and np.all(np.isfinite(arr))
    assert align.shape == (ex.n_frames // tiny_cfg.reduction_r, ex.char_ids.size)


def test_zero_loss_gives_zero_gradients(tiny_cfg):
    p = init_params(tiny_cfg, np.float64)
    for name in ("decoder.mel_proj.weight", "decoder.mel_proj.bias",
                 "postnet.linear_proj.weight", "postnet.linear_proj.bias"):
        p.tensors[name][:] = 0.0
    value, grads, _ = backward([2, 3, 1], (np.zeros((4, 3)), np.zeros((4, 5))), p, rng=np.random.default_rng(0))
    assert value == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_non_finite_loss_aborts(tiny_cfg):
    p = init_params(tiny_cfg, np.float64)
    with pytest.raises(TrainingError):
        backward([2, 1], (np.full((2, 3), np.inf), np.zeros((2, 5))), p)


def test_finite_difference_every_group(tiny_cfg):
    ex = examples(tiny_cfg, 1, seed=3)[0]
    worst, records = finite_difference_check(init_params(tiny_cfg), ex)
    assert worst < 1e-4
    assert len(records) >= 50
    assert {r[0] for r in records} == {n for n, _ in param_schema(tiny_cfg)}
    again, _ = finite_difference_check(init_params(tiny_cfg), ex)
    assert again == worst


def test_clipping_bound(rng):
    for scale in (0.01, 1.0, 100.0):
        grads = {"a": rng.standard_normal((3, 4)) * scale, "b": rng.standard_normal(5) * scale}
        clipped, norm = clip_by_global_norm(grads, 1.0)
        assert norm == pytest.approx(global_norm(grads))
        assert global_norm(clipped) <= 1.0 + 1e-6
        if norm <= 1.0:
            assert all(np.array_equal(clipped[k], grads[k]) for k in grads)


# optimizer loop

def test_train_step_updates(tiny_cfg):
    state = fresh_state(tiny_cfg)
    before = {k: v.copy() for k, v in state.params.tensors.items()}
    res = train_step(state, examples(tiny_cfg, 2))
    assert np.isfinite(res.loss) and 0 <= res.diagonality <= 1
    assert state.step == 1 and state.loss_history == [res.loss]
    assert any(not np.array_equal(before[k], v) for k, v in state.params.tensors.items())


def test_equal_seeds_equal_traces(tiny_cfg):
    data = examples(tiny_cfg)
    a = train(fresh_state(tiny_cfg), data, steps=4)
    b = train(fresh_state(tiny_cfg), data, steps=4)
    assert a == b and all(np.isfinite(a))
    c = train(fresh_state(tiny_cfg, seed=6), data, steps=4)
    assert c != a


def test_train_writes_log_and_checkpoints(tiny_cfg, tmp_path):
    state = fresh_state(tiny_cfg)
    seen = []
    train(state, examples(tiny_cfg), out_dir=tmp_path, log_path=tmp_path / "log.csv",
          on_checkpoint=lambda s, p: seen.append(p.name))
    assert seen == ["checkpoint-0000003.btts", "checkpoint-0000006.btts"]
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,diagonality,wall_ms" and len(lines) == 7
    with pytest.raises(TrainingError):
        train(fresh_state(tiny_cfg), [], steps=1)


def test_resume_continues_identical_trace(tiny_cfg, tmp_path):
    data = examples(tiny_cfg)
    straight = train(fresh_state(tiny_cfg), data, steps=6)
    first = fresh_state(tiny_cfg)
    head = train(first, data, steps=3)
    save_checkpoint(first, tmp_path / "c.btts")
    resumed = load_checkpoint(tmp_path / "c.btts", tiny_cfg)
    assert head + train(resumed, data, steps=3) == straight


# checkpoints

def test_checkpoint_round_trip_bytes(tiny_cfg, tmp_path):
    state = fresh_state(tiny_cfg)
    train(state, examples(tiny_cfg), steps=2)
    save_checkpoint(state, tmp_path / "a.btts")
    loaded = load_checkpoint(tmp_path / "a.btts", tiny_cfg, SignalConfig())
    save_checkpoint(loaded, tmp_path / "b.btts")
    assert (tmp_path / "a.btts").read_bytes() == (tmp_path / "b.btts").read_bytes()
    assert loaded.step == 2 and loaded.vocab == ("a", "b")
    assert loaded.loss_history == state.loss_history
    for k, v in state.params.tensors.items():
        assert np.array_equal(loaded.params.tensors[k], v)
        assert np.array_equal(loaded.adam_m[k], state.adam_m[k])
        assert np.array_equal(loaded.adam_v[k], state.adam_v[k])
    for k, v in state.params.buffers.items():
        assert np.array_equal(loaded.params.buffers[k], v)


def test_checkpoint_errors(tiny_cfg, tmp_path):
    path = tmp_path / "a.btts"
    save_checkpoint(fresh_state(tiny_cfg), path)
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_checkpoint(path, ModelConfig(**{**TINY, "gru_dim": 4}))
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_checkpoint(path, signal_cfg=SignalConfig(hop_length=200))
    data = path.read_bytes()
    for cut in (3, 20, len(data) // 2, len(data) - 1):
        (tmp_path / "t.btts").write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.btts")
    (tmp_path / "x.btts").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "x.btts")
    (tmp_path / "m.btts").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.btts")


# alignment diagnostics

def test_diagonality_identity_and_uniform(rng):
    assert alignment_diagonality(np.eye(17)) == 1.0
    # a uniform row at position x keeps |[x-b, x+b] ∩ [0,1]|; averaged over x that is 2b - b^2
    uniform = np.full((400, 100), 0.01)
    assert alignment_diagonality(uniform) == pytest.approx(2 * 0.1 - 0.1 ** 2, abs=0.005)
    for _ in range(50):
        a = rng.random((int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        assert 0.0 <= alignment_diagonality(a) <= 1.0
    assert alignment_diagonality(np.zeros((3, 3))) == 0.0


def test_export_alignment(tmp_path, rng):
    a = rng.random((7, 4))
    a /= a.sum(axis=1, keepdims=True)
    csv_path, pgm_path = export_alignment(a, tmp_path / "align")
    np.testing.assert_allclose(read_alignment_csv(csv_path), a, atol=1e-6)
    img = read_pgm(pgm_path)
    assert img.shape == a.shape and img.dtype == np.uint8
    assert img[np.unravel_index(np.argmax(a), a.shape)] == 255
    assert np.all(np.diff(img.ravel()[np.argsort(a.ravel())].astype(int)) >= 0)
