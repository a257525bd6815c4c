"""Loss, reverse-mode gradients, Adam training loop, checkpoints and
attention-alignment diagnostics."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .binio import (RecordError, read_exact, read_str, read_table, read_u32, read_u64,
                    write_str, write_table, write_u32, write_u64)
from .model import Context, ForwardOutput, ModelConfig, ModelParams, _forward, param_schema
from .signal import SignalConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BTTS"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    decay_steps: int = 50_000
    decay_rate: float = 0.5
    batch_size: int = 4
    max_steps: int = 1000
    checkpoint_interval: int = 1000
    grad_clip_norm: float = 1.0
    seed: int = 1234
    history_tail: int = 200

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise TrainingError("train.learning_rate: must be positive")
        if self.checkpoint_interval < 1:
            raise TrainingError("train.checkpoint_interval: must be >= 1")
        for name in ("decay_steps", "batch_size", "max_steps", "history_tail"):
            if getattr(self, name) < 1:
                raise TrainingError(f"train.{name}: must be >= 1")
        if not 0 < self.decay_rate <= 1:
            raise TrainingError("train.decay_rate: must be in (0, 1]")
        if self.grad_clip_norm <= 0:
            raise TrainingError("train.grad_clip_norm: must be positive")
        return self

    def learning_rate_at(self, step: int) -> float:
        return self.learning_rate * self.decay_rate ** (step // self.decay_steps)


@dataclass
class Example:
    char_ids: np.ndarray
    mel: np.ndarray
    linear: np.ndarray
    id: str = ""

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


# loss

def loss(output: ForwardOutput, mel_target: np.ndarray, linear_target: np.ndarray) -> float:
    """Mean absolute error on mel plus mean absolute error on linear."""
    return float(np.mean(np.abs(output.mel_out - mel_target))
                 + np.mean(np.abs(output.linear_out - linear_target)))


def loss_percent(value: float, mel_target: np.ndarray, linear_target: np.ndarray) -> float:
    """Loss as a percentage of the targets' combined dynamic range.

    Only meant for loose comparison with percentage losses quoted elsewhere.
    """
    span = float(np.ptp(mel_target) + np.ptp(linear_target))
    return 100.0 * value / span if span > 0 else float("nan")


def _graph_loss(ctx: Context, ex: Example, cfg: ModelConfig):
    g = _forward(ctx, ex.char_ids, cfg, teacher_mel=ex.mel)
    total = ag.add(ag.mean_abs_error(g.mel_out, ex.mel), ag.mean_abs_error(g.linear_out, ex.linear))
    return total, g


def backward(char_ids, targets: Tuple[np.ndarray, np.ndarray], params: ModelParams,
             cfg: Optional[ModelConfig] = None, rng: Optional[np.random.Generator] = None,
             update_stats: bool = False):
    """Teacher-forced loss and its exact gradient for every parameter.

    Returns ``(loss, grads, alignment)``; ``grads`` maps each parameter
    name to an array of the parameter's shape.
    """
    cfg = cfg or params.config
    mel, linear = targets
    dtype = next(iter(params.tensors.values())).dtype
    ex = Example(np.asarray(char_ids), np.asarray(mel, dtype), np.asarray(linear, dtype))
    ctx = Context.build(params, requires_grad=True, training=True, rng=rng, update_stats=update_stats)
    total, g = _graph_loss(ctx, ex, cfg)
    value = float(total.data)
    if not np.isfinite(value):
        raise TrainingError("non-finite loss; aborting step")
    total.backward()
    grads = {}
    for name, leaf in ctx.params.items():
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return value, grads, g.alignment


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: (v * scale).astype(v.dtype) for k, v in grads.items()}
    return grads, norm


def finite_difference_check(params: ModelParams, sample: Example, epsilon: float = 1e-5,
                            n_samples: int = 50, seed: int = 0, dropout_seed: int = 7,
                            jitter: float = 1e-2):
    """Compare analytic gradients with central differences in float64.

    One scalar is drawn from every parameter tensor, then more at random
    until ``n_samples`` are checked. Dropout masks are re-drawn from the
    same seed on every evaluation so the loss is a fixed function.

    A freshly initialised model sits exactly on ReLU kinks (zero biases
    meet the all-zero first decoder frame), where no derivative exists.
    ``jitter`` adds seeded uniform noise of that size to every parameter
    first so the comparison happens at a differentiable point; pass 0 to
    check the parameters as given.

    Returns ``(max_relative_error, records)`` with one record
    ``(name, index, analytic, numeric, rel_err)`` per sampled scalar.
    """
    p64 = params.astype(np.float64)
    cfg = p64.config
    if jitter:
        noise = np.random.default_rng([seed, 1])
        for arr in p64.tensors.values():
            arr += noise.uniform(-jitter, jitter, size=arr.shape)
    ex = Example(np.asarray(sample.char_ids), np.asarray(sample.mel, np.float64),
                 np.asarray(sample.linear, np.float64))

    def rng():
        return np.random.default_rng(dropout_seed)

    _, grads, _ = backward(ex.char_ids, (ex.mel, ex.linear), p64, cfg, rng=rng())

    def loss_at(name, idx, delta):
        arr = p64.tensors[name]
        old = arr[idx]
        arr[idx] = old + delta
        try:
            ctx = Context.build(p64, training=True, rng=rng())
            return float(_graph_loss(ctx, ex, cfg)[0].data)
        finally:
            arr[idx] = old

    pick = np.random.default_rng(seed)
    names = [name for name, _ in param_schema(cfg)]
    chosen = [(n, tuple(int(pick.integers(s)) for s in p64.tensors[n].shape)) for n in names]
    while len(chosen) < n_samples:
        n = names[int(pick.integers(len(names)))]
        chosen.append((n, tuple(int(pick.integers(s)) for s in p64.tensors[n].shape)))

    records = []
    for name, idx in chosen:
        numeric = (loss_at(name, idx, epsilon) - loss_at(name, idx, -epsilon)) / (2 * epsilon)
        analytic = float(grads[name][idx])
        scale = max(abs(analytic), abs(numeric))
        rel = abs(analytic - numeric) / scale if scale > 1e-7 else abs(analytic - numeric)
        records.append((name, idx, analytic, numeric, rel))
    return max(r[4] for r in records), records


# optimizer state and loop

@dataclass
class TrainState:
    params: ModelParams
    train_cfg: TrainConfig
    signal_cfg: Optional[SignalConfig] = None
    step: int = 0
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    loss_history: List[float] = field(default_factory=list)
    vocab: Tuple[str, ...] = ()

    def __post_init__(self):
        for k, v in self.params.tensors.items():
            self.adam_m.setdefault(k, np.zeros_like(v))
            self.adam_v.setdefault(k, np.zeros_like(v))


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_update(state: TrainState, grads: Dict[str, np.ndarray], lr: float) -> None:
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, p in state.params.tensors.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    diagonality: float


def train_step(state: TrainState, batch: Sequence[Example]) -> StepResult:
    """Backward over the batch, clip, Adam update, advance the step counter.

    Each example runs at its own length, so no cross-example padding ever
    reaches the loss.
    """
    cfg = state.params.config
    rng = np.random.default_rng([state.train_cfg.seed, state.step])
    total, diag = 0.0, 0.0
    acc: Dict[str, np.ndarray] = {}
    for ex in batch:
        value, grads, align = backward(ex.char_ids, (ex.mel, ex.linear), state.params, cfg,
                                       rng=rng, update_stats=True)
        total += value
        diag += alignment_diagonality(align)
        for k, g in grads.items():
            acc[k] = g if k not in acc else acc[k] + g
    n = len(batch)
    grads = {k: v / n for k, v in acc.items()}
    grads, norm = clip_by_global_norm(grads, state.train_cfg.grad_clip_norm)
    adam_update(state, grads, state.train_cfg.learning_rate_at(state.step))
    state.step += 1
    mean_loss = total / n
    state.loss_history.append(mean_loss)
    del state.loss_history[:-state.train_cfg.history_tail]
    return StepResult(mean_loss, norm, diag / n)


def make_batches(examples: Sequence[Example], batch_size: int) -> List[List[int]]:
    """Bucket example indices by target length into fixed-size batches."""
    order = sorted(range(len(examples)), key=lambda i: (examples[i].n_frames, i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def batch_for_step(examples: Sequence[Example], batches: List[List[int]], seed: int, step: int):
    epoch, pos = divmod(step, len(batches))
    perm = np.random.default_rng([seed, epoch, 0]).permutation(len(batches))
    return [examples[i] for i in batches[perm[pos]]]


def train(state: TrainState, examples: Sequence[Example], steps: Optional[int] = None,
          out_dir: Optional[os.PathLike] = None, log_path: Optional[os.PathLike] = None,
          on_checkpoint: Optional[Callable[[TrainState, Path], None]] = None) -> List[float]:
    """Run ``steps`` optimizer steps (``max_steps`` minus the current step by default).

    A checkpoint is written to ``out_dir`` every ``checkpoint_interval``
    steps; one CSV row ``step,loss,diagonality,wall_ms`` per step is
    appended to ``log_path``. Returns the per-step losses.
    """
    tc = state.train_cfg.validate()
    if not examples:
        raise TrainingError("no training examples")
    batches = make_batches(examples, tc.batch_size)
    if steps is None:
        steps = max(0, tc.max_steps - state.step)
    logfh = None
    if log_path is not None:
        fresh = not Path(log_path).exists() or Path(log_path).stat().st_size == 0
        logfh = open(log_path, "a", newline="")
        if fresh:
            logfh.write("step,loss,diagonality,wall_ms\n")
    losses = []
    try:
        for _ in range(steps):
            t0 = time.perf_counter()
            res = train_step(state, batch_for_step(examples, batches, tc.seed, state.step))
            losses.append(res.loss)
            wall = (time.perf_counter() - t0) * 1000.0
            if logfh:
                logfh.write(f"{state.step},{res.loss!r},{res.diagonality!r},{wall:.1f}\n")
            if state.step % 50 == 0:
                log.info("step %d loss %.5f diag %.3f", state.step, res.loss, res.diagonality)
            if out_dir is not None and state.step % tc.checkpoint_interval == 0:
                path = Path(out_dir) / f"checkpoint-{state.step:07d}.btts"
                save_checkpoint(state, path)
                if on_checkpoint:
                    on_checkpoint(state, path)
    finally:
        if logfh:
            logfh.close()
    return losses


# checkpoints

def _config_dict(cfg) -> dict:
    return None if cfg is None else asdict(cfg)


def save_checkpoint(state: TrainState, path) -> None:
    """Write ``state`` atomically; see the README for the byte layout."""
    cfg = state.params.config
    sig_fp = state.signal_cfg.fingerprint() if state.signal_cfg is not None else 0
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    write_u32(buf, CHECKPOINT_VERSION)
    write_u64(buf, state.step)
    write_u64(buf, cfg.fingerprint())
    write_u64(buf, sig_fp)
    write_table(buf, state.params.tensors)
    write_table(buf, state.adam_m)
    write_table(buf, state.adam_v)
    write_table(buf, state.params.buffers)
    meta = {
        "model": _config_dict(cfg),
        "signal": _config_dict(state.signal_cfg),
        "train": _config_dict(state.train_cfg),
        "vocab": list(state.vocab),
        "loss_history": [float(x) for x in state.loss_history],
    }
    write_str(buf, json.dumps(meta, sort_keys=True, ensure_ascii=False))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path, model_cfg: Optional[ModelConfig] = None,
                    signal_cfg: Optional[SignalConfig] = None) -> TrainState:
    """Read a checkpoint, refusing it if its fingerprints disagree with the
    supplied configs (or with the configs embedded in the file)."""
    try:
        with open(path, "rb") as fh:
            if read_exact(fh, 4) != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
            version = read_u32(fh)
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported version {version}")
            step = read_u64(fh)
            model_fp = read_u64(fh)
            signal_fp = read_u64(fh)
            tensors = read_table(fh)
            adam_m = read_table(fh)
            adam_v = read_table(fh)
            buffers = read_table(fh)
            meta = json.loads(read_str(fh))
            if fh.read(1):
                raise CheckpointError(f"{path}: trailing bytes after checkpoint")
    except RecordError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

    stored_model = ModelConfig(**meta["model"])
    stored_signal = SignalConfig(**meta["signal"]) if meta["signal"] else None
    if stored_model.fingerprint() != model_fp:
        raise CheckpointError(f"{path}: embedded model config does not match its fingerprint")
    if model_cfg is not None and model_cfg.fingerprint() != model_fp:
        raise CheckpointError(f"{path}: model config fingerprint mismatch")
    if signal_cfg is not None and signal_cfg.fingerprint() != signal_fp:
        raise CheckpointError(f"{path}: signal config fingerprint mismatch")
    params = ModelParams(stored_model, tensors, buffers)
    params.check()
    return TrainState(params, TrainConfig(**meta["train"]), stored_signal, step,
                      adam_m, adam_v, list(meta["loss_history"]), tuple(meta["vocab"]))


# alignment diagnostics

def alignment_diagonality(a: np.ndarray, band: float = 0.1) -> float:
    """Fraction of attention mass within ``band`` of the normalized diagonal.

    Row i and column j sit at (i + 0.5) / T_dec and (j + 0.5) / T_enc.
    """
    a = np.asarray(a, dtype=np.float64)
    total = a.sum()
    if total <= 0:
        return 0.0
    rows = (np.arange(a.shape[0]) + 0.5) / a.shape[0]
    cols = (np.arange(a.shape[1]) + 0.5) / a.shape[1]
    inside = np.abs(rows[:, None] - cols[None, :]) <= band + 1e-12
    return float(min(1.0, (a * inside).sum() / total))


def export_alignment(a: np.ndarray, path) -> Tuple[Path, Path]:
    """Write ``<path>.csv`` (rows = decoder steps) and an 8-bit ``<path>.pgm``."""
    a = np.asarray(a, dtype=np.float64)
    base = Path(path)
    if base.suffix in (".csv", ".pgm"):
        base = base.with_suffix("")
    csv_path, pgm_path = base.with_suffix(".csv"), base.with_suffix(".pgm")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in a:
            writer.writerow([f"{v:.9g}" for v in row])
    peak = a.max() if a.size else 0.0
    pixels = np.zeros(a.shape, np.uint8) if peak <= 0 else np.round(255.0 * a / peak).astype(np.uint8)
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return csv_path, pgm_path


def read_alignment_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(height, width)
