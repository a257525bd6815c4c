"""Flat ``section.key = value`` experiment configs.

Resolution order: built-in defaults, then the file, then ``key=value``
overrides, then ``BTTS_SEED`` from the environment. Everything is
validated before it is returned.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Iterable, Optional

from .model import ModelConfig, ModelConfigError
from .signal import SignalConfig, SignalError
from .training import TrainConfig, TrainingError

SECTIONS = {"signal": SignalConfig, "model": ModelConfig, "train": TrainConfig}
SEED_ENV = "BTTS_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResolvedConfig:
    signal: SignalConfig
    model: ModelConfig
    train: TrainConfig

    def echo(self) -> str:
        """One ``section.key = value`` line per setting, in declaration order."""
        lines = []
        for section in SECTIONS:
            cfg = getattr(self, section)
            for f in fields(cfg):
                lines.append(f"{section}.{f.name} = {_format(getattr(cfg, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _apply(configs: Dict[str, object], items: Dict[str, str], source: str):
    for key, raw in items.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"{source}: unknown key {key!r}")
        cfg = configs[section]
        known = {f.name for f in fields(cfg)}
        if name not in known:
            raise ConfigError(f"{source}: unknown key {key!r}")
        configs[section] = replace(cfg, **{name: _coerce(key, raw, getattr(cfg, name))})


def load_config(path: Optional[os.PathLike] = None, overrides: Iterable[str] = (),
                env: Optional[Dict[str, str]] = None, base: Optional[ResolvedConfig] = None) -> ResolvedConfig:
    base = base or ResolvedConfig(SignalConfig(), ModelConfig(), TrainConfig())
    configs = {s: getattr(base, s) for s in SECTIONS}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                _apply(configs, parse_lines(fh, str(path)), str(path))
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value
    _apply(configs, pairs, "override")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env[SEED_ENV]!r}") from None
        configs["model"] = replace(configs["model"], seed=seed)
        configs["train"] = replace(configs["train"], seed=seed)
    try:
        for cfg in configs.values():
            cfg.validate()
    except (SignalError, ModelConfigError, TrainingError) as exc:
        raise ConfigError(str(exc)) from None
    sig, model = configs["signal"], configs["model"]
    if model.mel_bands != sig.mel_bands:
        raise ConfigError(f"model.mel_bands: {model.mel_bands} != signal.mel_bands {sig.mel_bands}")
    if model.linear_bins != sig.n_bins:
        raise ConfigError(f"model.linear_bins: {model.linear_bins} != signal fft_size/2+1 = {sig.n_bins}")
    return ResolvedConfig(**configs)


def write_config(cfg: ResolvedConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.echo())
