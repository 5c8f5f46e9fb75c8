"""Flat key=value experiment configuration with strict key checking."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    """Everything a command needs; file keys match field names exactly."""

    corpus_dir: str = ""
    target: str = "valence"
    variant: str = "ca"
    seed: int = 0

    # optimizer / schedule
    lr_init: float = 0.01
    lr_decay: float = 0.98
    epochs: int = 100
    finetune_epochs: int = 10
    finetune_lr: float = 0.001
    batch_size: int = 256
    bptt_len: int = 80
    dropout_rate: float = 0.2
    grad_clip: float = 5.0
    alpha: float | None = None  # None resolves per target (0/0 or 0.04/0.02)
    beta: float | None = None
    audio_hidden: tuple[int, ...] = (100, 100)
    visual_hidden: tuple[int, ...] = (120, 120)
    early_hidden: tuple[int, ...] = (150, 150)
    gate_bias: bool = True

    # pre/postprocessing
    delay_n: int = 20
    smooth_window: int = 11

    # splits
    n_dev: int = 5
    n_test: int = 4
    fold_seed: int | None = None  # None falls back to seed

    # synthetic corpus
    n_recordings: int = 27
    frames_per_recording: int = 7500
    audio_dim: int = 76
    visual_dim: int = 400
    latent_smoothness: int = 151
    audio_informativeness: float = 1.0
    visual_informativeness: float = 1.0
    audio_noise: float = 0.1
    visual_noise: float = 0.02
    face_dropout_rate: float = 0.0
    face_dropout_mean_len: int = 75
    label_lag: int = 20


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_optional_float(text: str) -> float | None:
    if text.lower() in ("auto", "none"):
        return None
    return float(text)


def _parse_optional_int(text: str) -> int | None:
    if text.lower() in ("auto", "none"):
        return None
    return int(text)


_PARSERS = {
    "corpus_dir": str,
    "target": str,
    "variant": str,
    "seed": int,
    "lr_init": float,
    "lr_decay": float,
    "epochs": int,
    "finetune_epochs": int,
    "finetune_lr": float,
    "batch_size": int,
    "bptt_len": int,
    "dropout_rate": float,
    "grad_clip": float,
    "alpha": _parse_optional_float,
    "beta": _parse_optional_float,
    "audio_hidden": _parse_int_tuple,
    "visual_hidden": _parse_int_tuple,
    "early_hidden": _parse_int_tuple,
    "gate_bias": _parse_bool,
    "delay_n": int,
    "smooth_window": int,
    "n_dev": int,
    "n_test": int,
    "fold_seed": _parse_optional_int,
    "n_recordings": int,
    "frames_per_recording": int,
    "audio_dim": int,
    "visual_dim": int,
    "latent_smoothness": int,
    "audio_informativeness": float,
    "visual_informativeness": float,
    "audio_noise": float,
    "visual_noise": float,
    "face_dropout_rate": float,
    "face_dropout_mean_len": int,
    "label_lag": int,
}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.target not in ("arousal", "valence"):
        raise ConfigError(f"target must be arousal or valence, got {cfg.target!r}")
    if cfg.variant not in ("early", "model", "late", "ca"):
        raise ConfigError(f"variant must be one of early/model/late/ca, got {cfg.variant!r}")
    for key in ("audio_informativeness", "visual_informativeness", "face_dropout_rate"):
        v = getattr(cfg, key)
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{key} must be in [0,1], got {v}")
    if cfg.smooth_window < 1 or cfg.smooth_window % 2 == 0:
        raise ConfigError(f"smooth_window must be odd and >= 1, got {cfg.smooth_window}")
    if cfg.delay_n < 0:
        raise ConfigError(f"delay_n must be >= 0, got {cfg.delay_n}")


def resolve_loss_weights(cfg: ExperimentConfig) -> tuple[float, float]:
    """Per-target defaults: zero for arousal, 0.04/0.02 for valence."""
    defaults = {"arousal": (0.0, 0.0), "valence": (0.04, 0.02)}[cfg.target]
    alpha = defaults[0] if cfg.alpha is None else cfg.alpha
    beta = defaults[1] if cfg.beta is None else cfg.beta
    return alpha, beta


def format_config(cfg: ExperimentConfig) -> str:
    """Round-trippable key=value rendering of the resolved configuration."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            text = "auto"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
