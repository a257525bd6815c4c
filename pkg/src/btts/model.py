"""Character-to-spectrogram network: embedding -> pre-net -> CBHG encoder,
additive-attention GRU decoder emitting ``r`` mel frames per step, and a
CBHG post-net mapping mel frames to a linear spectrogram.

Public functions take and return numpy arrays; the ``_``-prefixed
versions work on :class:`~btts.autograd.Tensor` objects inside a
:class:`Context` so the training code can differentiate through them.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    embed_dim: int = 128
    prenet_dims: Tuple[int, ...] = (128, 64)
    prenet_dropout: float = 0.5
    encoder_bank_K: int = 8
    conv_channels: int = 64
    highway_layers: int = 4
    gru_dim: int = 64
    attention_dim: int = 64
    decoder_layers: int = 2
    mel_bands: int = 80
    linear_bins: int = 1025
    reduction_r: int = 2
    max_decoder_steps: int = 200
    stop_threshold: float = 0.06
    stop_patience: int = 5
    seed: int = 1234

    def __post_init__(self):
        object.__setattr__(self, "prenet_dims", tuple(int(d) for d in self.prenet_dims))

    def validate(self) -> "ModelConfig":
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "prenet_dims":
                if not value or any(d <= 0 for d in value):
                    raise ModelConfigError("model.prenet_dims: need at least one positive width")
            elif f.name in ("prenet_dropout",):
                if not 0.0 <= value < 1.0:
                    raise ModelConfigError("model.prenet_dropout: must be in [0, 1)")
            elif f.name in ("stop_threshold", "seed"):
                continue
            elif value <= 0:
                raise ModelConfigError(f"model.{f.name}: must be positive")
        return self

    @property
    def decoder_dim(self) -> int:
        return 2 * self.gru_dim

    def fingerprint(self) -> int:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# parameter schema

def _cbhg_schema(prefix: str, in_dim: int, cfg: ModelConfig) -> List[Tuple[str, tuple]]:
    K, C, g = cfg.encoder_bank_K, cfg.conv_channels, cfg.gru_dim
    out = []
    for k in range(1, K + 1):
        out += [(f"{prefix}.bank.{k}.weight", (k, in_dim, C)), (f"{prefix}.bank.{k}.bias", (C,)),
                (f"{prefix}.bank.{k}.bn.gamma", (C,)), (f"{prefix}.bank.{k}.bn.beta", (C,))]
    for name, cin, cout in (("proj1", K * C, C), ("proj2", C, in_dim)):
        out += [(f"{prefix}.{name}.weight", (3, cin, cout)), (f"{prefix}.{name}.bias", (cout,)),
                (f"{prefix}.{name}.bn.gamma", (cout,)), (f"{prefix}.{name}.bn.beta", (cout,))]
    if in_dim != g:
        out += [(f"{prefix}.pre_highway.weight", (in_dim, g)), (f"{prefix}.pre_highway.bias", (g,))]
    for i in range(cfg.highway_layers):
        out += [(f"{prefix}.highway.{i}.H.weight", (g, g)), (f"{prefix}.highway.{i}.H.bias", (g,)),
                (f"{prefix}.highway.{i}.T.weight", (g, g)), (f"{prefix}.highway.{i}.T.bias", (g,))]
    for d in ("gru_fw", "gru_bw"):
        out += _gru_schema(f"{prefix}.{d}", g, g)
    return out


def _gru_schema(prefix: str, in_dim: int, hidden: int):
    return [(f"{prefix}.W", (in_dim, 3 * hidden)), (f"{prefix}.b", (3 * hidden,)),
            (f"{prefix}.U_gates", (hidden, 2 * hidden)), (f"{prefix}.U_cand", (hidden, hidden))]


def _prenet_schema(prefix: str, in_dim: int, dims: Sequence[int]):
    out = []
    for i, d in enumerate(dims):
        out += [(f"{prefix}.{i}.weight", (in_dim, d)), (f"{prefix}.{i}.bias", (d,))]
        in_dim = d
    return out


def param_schema(cfg: ModelConfig) -> List[Tuple[str, tuple]]:
    """Ordered (name, shape) pairs of every learnable tensor."""
    g2, A, p_last = cfg.decoder_dim, cfg.attention_dim, cfg.prenet_dims[-1]
    schema = [("embedding", (cfg.vocab_size, cfg.embed_dim))]
    schema += _prenet_schema("encoder.prenet", cfg.embed_dim, cfg.prenet_dims)
    schema += _cbhg_schema("encoder.cbhg", p_last, cfg)
    schema += _prenet_schema("decoder.prenet", cfg.mel_bands, cfg.prenet_dims)
    schema += _gru_schema("decoder.attention_rnn", p_last + g2, A)
    schema += [("decoder.attention.query", (A, A)), ("decoder.attention.memory", (g2, A)),
               ("decoder.attention.v", (A,))]
    schema += [("decoder.input_proj.weight", (A + g2, g2)), ("decoder.input_proj.bias", (g2,))]
    for layer in range(cfg.decoder_layers):
        schema += _gru_schema(f"decoder.rnn.{layer}", g2, g2)
    schema += [("decoder.mel_proj.weight", (g2, cfg.reduction_r * cfg.mel_bands)),
               ("decoder.mel_proj.bias", (cfg.reduction_r * cfg.mel_bands,))]
    schema += _cbhg_schema("postnet.cbhg", cfg.mel_bands, cfg)
    schema += [("postnet.linear_proj.weight", (g2, cfg.linear_bins)),
               ("postnet.linear_proj.bias", (cfg.linear_bins,))]
    return schema


def buffer_schema(cfg: ModelConfig) -> List[Tuple[str, tuple]]:
    """Batch-norm running statistics (not learned by gradient)."""
    out = []
    for name, shape in param_schema(cfg):
        if name.endswith(".bn.gamma"):
            base = name[: -len("gamma")]
            out += [(base + "running_mean", shape), (base + "running_var", shape)]
    return out


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()},
                           {k: v.astype(dtype) for k, v in self.buffers.items()})

    def check(self) -> None:
        schema = dict(param_schema(self.config))
        if set(schema) != set(self.tensors):
            missing = sorted(set(schema) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(schema))
            raise ModelConfigError(f"parameter names differ from schema: missing {missing}, extra {extra}")
        for name, shape in schema.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise ModelConfigError(f"{name}: shape {arr.shape} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelConfigError(f"{name}: non-finite values")


def init_params(cfg: ModelConfig, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, highway gate biases at -1."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, shape in param_schema(cfg):
        leafname = name.rsplit(".", 1)[-1]
        if leafname == "gamma":
            arr = np.ones(shape)
        elif leafname in ("bias", "b", "beta"):
            arr = np.full(shape, -1.0) if ".T." in name else np.zeros(shape)
        else:
            if len(shape) == 3:  # conv kernel (k, in, out)
                fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
            elif len(shape) == 2:
                fan_in, fan_out = shape
            else:
                fan_in, fan_out = shape[0], 1
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-limit, limit, size=shape)
        tensors[name] = arr.astype(dtype)
    buffers = {}
    for name, shape in buffer_schema(cfg):
        buffers[name] = (np.zeros(shape) if name.endswith("mean") else np.ones(shape)).astype(dtype)
    return ModelParams(cfg, tensors, buffers)


# graph building

@dataclass
class Context:
    """Per-call view of the parameters as graph leaves."""
    params: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray]
    training: bool = False
    rng: Optional[np.random.Generator] = None
    update_stats: bool = False
    dropout: float = 0.5

    @classmethod
    def build(cls, params: ModelParams, *, requires_grad=False, training=False,
              rng=None, update_stats=False) -> "Context":
        make = ag.leaf if requires_grad else Tensor
        return cls({k: make(v) for k, v in params.tensors.items()}, params.buffers,
                   training, rng, update_stats, params.config.prenet_dropout)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]


def _prenet(ctx: Context, x: Tensor, prefix: str, n_layers: int) -> Tensor:
    for i in range(n_layers):
        x = ag.relu(ag.linear(x, ctx[f"{prefix}.{i}.weight"], ctx[f"{prefix}.{i}.bias"]))
        x = ag.dropout(x, ctx.dropout, ctx.rng)
    return x


def _highway(ctx: Context, x: Tensor, prefix: str, n_layers: int) -> Tensor:
    for i in range(n_layers):
        p = f"{prefix}.{i}"
        h = ag.relu(ag.linear(x, ctx[p + ".H.weight"], ctx[p + ".H.bias"]))
        t = ag.sigmoid(ag.linear(x, ctx[p + ".T.weight"], ctx[p + ".T.bias"]))
        # y = h*t + x*(1-t) = x + t*(h - x)
        x = x + t * (h - x)
    return x


def _conv_bn(ctx: Context, x: Tensor, prefix: str, activation: bool) -> Tensor:
    y = ag.conv1d(x, ctx[prefix + ".weight"], ctx[prefix + ".bias"])
    if activation:
        y = ag.relu(y)
    return ag.batch_norm(y, ctx[prefix + ".bn.gamma"], ctx[prefix + ".bn.beta"],
                         ctx.buffers[prefix + ".bn.running_mean"],
                         ctx.buffers[prefix + ".bn.running_var"],
                         training=ctx.training, update_stats=ctx.update_stats)


def _gru_sequence(ctx: Context, x: Tensor, prefix: str, reverse: bool = False) -> Tensor:
    T = x.shape[0]
    H = ctx[prefix + ".U_cand"].shape[0]
    xw = ag.linear(x, ctx[prefix + ".W"], ctx[prefix + ".b"])
    h = Tensor(np.zeros((1, H), dtype=x.data.dtype))
    outs: List[Optional[Tensor]] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h = ag.gru_step(xw[t:t + 1], h, ctx[prefix + ".U_gates"], ctx[prefix + ".U_cand"])
        outs[t] = h
    return ag.stack_rows(outs)


def _bigru(ctx: Context, x: Tensor, prefix: str) -> Tensor:
    fw = _gru_sequence(ctx, x, prefix + ".gru_fw")
    bw = _gru_sequence(ctx, x, prefix + ".gru_bw", reverse=True)
    return ag.concat([fw, bw], axis=1)


def _cbhg(ctx: Context, x: Tensor, prefix: str, cfg: ModelConfig) -> Tensor:
    in_dim = x.shape[1]
    bank = [_conv_bn(ctx, x, f"{prefix}.bank.{k}", True) for k in range(1, cfg.encoder_bank_K + 1)]
    y = ag.maxpool_same2(ag.concat(bank, axis=1))
    y = _conv_bn(ctx, y, prefix + ".proj1", True)
    y = _conv_bn(ctx, y, prefix + ".proj2", False)
    if y.shape[1] != in_dim:
        raise ModelConfigError(f"{prefix}: projection width {y.shape[1]} cannot add to input width {in_dim}")
    y = y + x
    if prefix + ".pre_highway.weight" in ctx.params:
        y = ag.linear(y, ctx[prefix + ".pre_highway.weight"], ctx[prefix + ".pre_highway.bias"])
    y = _highway(ctx, y, prefix + ".highway", cfg.highway_layers)
    return _bigru(ctx, y, prefix)


def _encode(ctx: Context, char_ids: Sequence[int], cfg: ModelConfig) -> Tensor:
    if len(char_ids) == 0:
        raise ValueError("cannot encode an empty id sequence")
    emb = ag.embedding(ctx["embedding"], np.asarray(char_ids))
    pre = _prenet(ctx, emb, "encoder.prenet", len(cfg.prenet_dims))
    return _cbhg(ctx, pre, "encoder.cbhg", cfg)


def _attention(ctx: Context, query: Tensor, memory: Tensor, keys: Tensor):
    q = ag.linear(query, ctx["decoder.attention.query"])
    energies = ag.tanh(keys + q)
    scores = ag.reshape(ag.matmul(energies, ctx["decoder.attention.v"]), (1, -1))
    weights = ag.softmax(scores)
    context = ag.matmul(weights, memory)
    return context, weights


@dataclass
class DecoderState:
    attention_h: Tensor
    context: Tensor
    layers: List[Tensor]

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype) -> "DecoderState":
        g2 = cfg.decoder_dim
        return cls(Tensor(np.zeros((1, cfg.attention_dim), dtype)),
                   Tensor(np.zeros((1, g2), dtype)),
                   [Tensor(np.zeros((1, g2), dtype)) for _ in range(cfg.decoder_layers)])


def _decoder_step(ctx: Context, pre: Tensor, state: DecoderState, memory: Tensor,
                  keys: Tensor, cfg: ModelConfig):
    """``pre`` is the pre-net output for the previous frame, shape (1, p)."""
    x = ag.concat([pre, state.context], axis=1)
    p = "decoder.attention_rnn"
    s = ag.gru_step(ag.linear(x, ctx[p + ".W"], ctx[p + ".b"]), state.attention_h,
                    ctx[p + ".U_gates"], ctx[p + ".U_cand"])
    context, weights = _attention(ctx, s, memory, keys)
    inp = ag.linear(ag.concat([s, context], axis=1),
                    ctx["decoder.input_proj.weight"], ctx["decoder.input_proj.bias"])
    layers = []
    for layer, h in enumerate(state.layers):
        p = f"decoder.rnn.{layer}"
        h = ag.gru_step(ag.linear(inp, ctx[p + ".W"], ctx[p + ".b"]), h,
                        ctx[p + ".U_gates"], ctx[p + ".U_cand"])
        layers.append(h)
        inp = inp + h
    frames = ag.linear(inp, ctx["decoder.mel_proj.weight"], ctx["decoder.mel_proj.bias"])
    return frames, DecoderState(s, context, layers), weights


@dataclass
class ForwardOutput:
    mel_out: np.ndarray
    linear_out: np.ndarray
    alignment: np.ndarray
    stop_step: int


@dataclass
class _Graph:
    mel_out: Tensor
    linear_out: Tensor
    alignment: np.ndarray
    stop_step: int

    def numpy(self) -> ForwardOutput:
        return ForwardOutput(self.mel_out.data, self.linear_out.data, self.alignment, self.stop_step)


def _forward(ctx: Context, char_ids, cfg: ModelConfig, teacher_mel: Optional[np.ndarray] = None,
             max_steps: Optional[int] = None) -> _Graph:
    r, n_mels = cfg.reduction_r, cfg.mel_bands
    memory = _encode(ctx, char_ids, cfg)
    keys = ag.linear(memory, ctx["decoder.attention.memory"])
    dtype = memory.data.dtype
    state = DecoderState.zeros(cfg, dtype)
    go = np.zeros((1, n_mels), dtype)
    n_pre = len(cfg.prenet_dims)
    outputs, rows = [], []

    if teacher_mel is not None:
        teacher_mel = np.asarray(teacher_mel, dtype=dtype)
        if teacher_mel.ndim != 2 or teacher_mel.shape[1] != n_mels:
            raise ValueError(f"teacher mel must be (frames, {n_mels}), got {teacher_mel.shape}")
        if teacher_mel.shape[0] % r or teacher_mel.shape[0] == 0:
            raise ValueError(f"teacher frame count {teacher_mel.shape[0]} is not a positive multiple of r={r}")
        steps = teacher_mel.shape[0] // r
        inputs = np.concatenate([go, teacher_mel[r - 1:-1:r]], axis=0)
        pre_all = _prenet(ctx, Tensor(inputs), "decoder.prenet", n_pre)
        for t in range(steps):
            frames, state, w = _decoder_step(ctx, pre_all[t:t + 1], state, memory, keys, cfg)
            outputs.append(frames)
            rows.append(w.data[0])
        stop_step = steps
    else:
        cap = max_steps or cfg.max_decoder_steps
        prev = go
        quiet = 0
        stop_step = cap
        for t in range(cap):
            pre = _prenet(ctx, Tensor(prev), "decoder.prenet", n_pre)
            frames, state, w = _decoder_step(ctx, pre, state, memory, keys, cfg)
            outputs.append(frames)
            rows.append(w.data[0])
            group = frames.data.reshape(r, n_mels)
            prev = group[-1:]
            quiet = quiet + 1 if group.mean() < cfg.stop_threshold else 0
            if quiet >= cfg.stop_patience:
                stop_step = t + 1
                break

    mel = ag.reshape(ag.stack_rows(outputs), (len(outputs) * r, n_mels))
    post = _cbhg(ctx, mel, "postnet.cbhg", cfg)
    linear_out = ag.linear(post, ctx["postnet.linear_proj.weight"], ctx["postnet.linear_proj.bias"])
    return _Graph(mel, linear_out, np.stack(rows), stop_step)


# numpy-facing API

def prenet(x: np.ndarray, params: ModelParams, training: bool = False,
           prefix: str = "encoder.prenet", rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Affine -> ReLU -> dropout per layer.

    Dropout is applied whenever an ``rng`` is supplied, in training and at
    inference alike; pass ``rng=None`` to disable it.
    """
    ctx = Context.build(params, training=training, rng=rng)
    return _prenet(ctx, Tensor(np.asarray(x)), prefix, len(params.config.prenet_dims)).data


def highway(x: np.ndarray, params: ModelParams, prefix: str = "encoder.cbhg.highway") -> np.ndarray:
    ctx = Context.build(params)
    return _highway(ctx, Tensor(np.asarray(x)), prefix, params.config.highway_layers).data


def cbhg(x: np.ndarray, params: ModelParams, cfg: Optional[ModelConfig] = None,
         prefix: str = "encoder.cbhg", training: bool = False) -> np.ndarray:
    cfg = cfg or params.config
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("cbhg expects a nonempty (T, C) matrix")
    width = params.tensors[f"{prefix}.bank.1.weight"].shape[1]
    if x.shape[1] != width:
        raise ModelConfigError(f"{prefix} expects {width} input channels, got {x.shape[1]}")
    ctx = Context.build(params, training=training)
    return _cbhg(ctx, Tensor(x), prefix, cfg).data


def encode(char_ids, params: ModelParams, cfg: Optional[ModelConfig] = None,
           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    cfg = cfg or params.config
    return _encode(Context.build(params, rng=rng), char_ids, cfg).data


def attention_step(query: np.ndarray, encoder_states: np.ndarray, params: ModelParams):
    """Additive attention: returns (context vector, weight row)."""
    ctx = Context.build(params)
    memory = Tensor(np.atleast_2d(encoder_states))
    keys = ag.linear(memory, ctx["decoder.attention.memory"])
    context, weights = _attention(ctx, Tensor(np.atleast_2d(query)), memory, keys)
    return context.data[0], weights.data[0]


def decoder_step(prev_frame: np.ndarray, state: Optional[DecoderState], encoder_states: np.ndarray,
                 params: ModelParams, cfg: Optional[ModelConfig] = None,
                 rng: Optional[np.random.Generator] = None):
    """One decoder step; returns (r x mel frames, new state, alignment row)."""
    cfg = cfg or params.config
    ctx = Context.build(params, rng=rng)
    memory = Tensor(np.atleast_2d(encoder_states))
    keys = ag.linear(memory, ctx["decoder.attention.memory"])
    if state is None:
        state = DecoderState.zeros(cfg, memory.data.dtype)
    pre = _prenet(ctx, Tensor(np.atleast_2d(prev_frame)), "decoder.prenet", len(cfg.prenet_dims))
    frames, new_state, w = _decoder_step(ctx, pre, state, memory, keys, cfg)
    return frames.data.reshape(cfg.reduction_r, cfg.mel_bands), new_state, w.data[0]


def forward(char_ids, params: ModelParams, cfg: Optional[ModelConfig] = None,
            teacher_mel: Optional[np.ndarray] = None, max_steps: Optional[int] = None,
            rng: Optional[np.random.Generator] = None, training: bool = False) -> ForwardOutput:
    """Run the whole network.

    With ``teacher_mel`` the decoder is fed ground-truth frames (the last
    frame of each previous r-group, zeros first); otherwise it runs on its
    own predictions until the stop rule fires or ``max_steps`` is hit.
    """
    cfg = cfg or params.config
    ctx = Context.build(params, training=training, rng=rng)
    return _forward(ctx, char_ids, cfg, teacher_mel, max_steps).numpy()


class SynthesisError(ValueError):
    pass


def synthesize(text: str, params: ModelParams, cfg: Optional[ModelConfig], rules, vocab,
               signal_cfg, seed: Optional[int] = None, return_output: bool = False):
    """Text -> waveform: normalize, encode, free-running forward, Griffin-Lim."""
    from . import signal as sig
    from .textnorm import encode as encode_text, normalize

    cfg = cfg or params.config
    norm = normalize(text, rules)
    if not norm.text.strip():
        raise SynthesisError(f"text {text!r} is empty after normalization")
    ids = encode_text(norm, vocab)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    out = forward(ids, params.astype(np.float64), cfg, rng=rng)
    mag = sig.denormalize_db(out.linear_out, signal_cfg)
    spec = sig.MagnitudeSpectrogram(mag, signal_cfg, "linear")
    audio = sig.griffin_lim(spec, signal_cfg)
    audio = sig.inverse_preemphasis(audio, signal_cfg.preemphasis_coeff)
    peak = np.max(np.abs(audio.samples)) if len(audio) else 0.0
    if peak > 1.0:
        audio = sig.AudioBuffer(audio.samples / peak, audio.sample_rate)
    return (audio, out) if return_output else audio
