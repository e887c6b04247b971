"""Run configuration: model dims, loss weights, optimizer, data and inference.

Configs load from JSON (missing keys fall back to defaults, unknown keys are
rejected with the offending field named) and individual keys can be
overridden with dotted paths, which is how CLI flags are applied.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

COUNT_LOSS_MODES = ("saoc", "ce", "none")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    d_model: int = 32
    n_f: int = 8
    n_v: int = 8
    k_classes: int = 4
    k_max: int = 2
    m_audio: int = 1
    h: int = 32
    w: int = 32
    channels: int = 3
    d_ff: int = 128
    acqg_layers: int = 3
    decoder_layers: int = 3
    window: int = 6
    use_acqg: bool = True
    count_loss: str = "saoc"
    audio_in_tracker: bool = True
    saoc_conditional_mask: bool = False


@dataclass
class LossConfig:
    lambda_saoc: float = 1.0
    sim_weight: float = 0.5
    w_cls: float = 2.0
    w_bce: float = 5.0
    w_dice: float = 5.0


@dataclass
class TrainConfig:
    steps: int = 400
    lr: float = 1e-3
    batch_size: int = 1
    seed: int = 0
    checkpoint_interval: int = 0  # 0 = final checkpoint only


@dataclass
class DataConfig:
    n_train: int = 64
    n_val: int = 16
    t: int = 8
    h: int = 32
    w: int = 32
    channels: int = 3
    k_classes: int = 4
    sprites_min: int = 2
    sprites_max: int = 4
    size_min: int = 3
    size_max: int = 5
    count_ceiling: int = 2
    audio_dim: int = 8
    m_audio: int = 1
    d_model: int = 32
    noise_audio: float = 0.05
    noise_visual: float = 0.15
    seed: int = 0


@dataclass
class InferConfig:
    threshold: float = 0.5


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    corpus_dir: str = "corpus"
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "infer": InferConfig,
}


def _build_section(cls, payload: dict, where: str):
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown key '{sorted(unknown)[0]}'")
    return cls(**payload)


def config_from_dict(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = RunConfig()
    for key, value in payload.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            setattr(cfg, key, _build_section(_SECTIONS[key], value, key))
        elif key in ("corpus_dir", "out_dir"):
            setattr(cfg, key, str(value))
        else:
            raise ConfigError(f"unknown top-level key '{key}'")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(payload)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")


def apply_override(cfg: RunConfig, dotted: str, value) -> None:
    """Set e.g. 'loss.lambda_saoc' or 'corpus_dir' on an existing config."""
    parts = dotted.split(".")
    if len(parts) == 1:
        if not hasattr(cfg, parts[0]):
            raise ConfigError(f"unknown config key '{dotted}'")
        setattr(cfg, parts[0], value)
        return
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown config key '{dotted}'")
    section = getattr(cfg, parts[0])
    if not hasattr(section, parts[1]):
        raise ConfigError(f"unknown config key '{dotted}'")
    setattr(section, parts[1], value)


def validate(cfg: RunConfig) -> None:
    m, d = cfg.model, cfg.data
    for name, v in (
        ("model.d_model", m.d_model),
        ("model.n_f", m.n_f),
        ("model.n_v", m.n_v),
        ("model.k_classes", m.k_classes),
        ("model.m_audio", m.m_audio),
        ("model.h", m.h),
        ("model.w", m.w),
        ("model.window", m.window),
        ("model.decoder_layers", m.decoder_layers),
        ("model.acqg_layers", m.acqg_layers),
        ("data.t", d.t),
        ("train.batch_size", cfg.train.batch_size),
    ):
        if v < 1:
            raise ConfigError(f"{name} must be positive, got {v}")
    if not 1 <= m.k_max <= 8:
        raise ConfigError(f"model.k_max must be in 1..8, got {m.k_max}")
    if m.count_loss not in COUNT_LOSS_MODES:
        raise ConfigError(f"model.count_loss must be one of {COUNT_LOSS_MODES}, got '{m.count_loss}'")
    if m.h % 2 or m.w % 2:
        raise ConfigError(f"model.h and model.w must be even for 2x2 pooling, got {m.h}x{m.w}")
    if not 0.0 < cfg.infer.threshold < 1.0:
        raise ConfigError(f"infer.threshold must lie in (0, 1), got {cfg.infer.threshold}")
    if cfg.train.steps < 0 or cfg.train.lr <= 0:
        raise ConfigError("train.steps must be >= 0 and train.lr positive")
    # data feasibility
    margin = d.size_max + 1
    if 2 * margin >= min(d.h, d.w):
        raise ConfigError(
            f"data.size_max {d.size_max} leaves no room for sprites in a {d.h}x{d.w} frame"
        )
    if d.sprites_min < 0 or d.sprites_max < d.sprites_min:
        raise ConfigError("data.sprites_min/max must satisfy 0 <= min <= max")
    if d.sprites_max > d.k_classes:
        raise ConfigError(
            f"data.sprites_max {d.sprites_max} exceeds k_classes {d.k_classes}; "
            "sprites carry distinct classes within a video"
        )
    if d.count_ceiling < 0:
        raise ConfigError(f"data.count_ceiling must be >= 0, got {d.count_ceiling}")


def check_model_matches_data(cfg: RunConfig) -> None:
    m, d = cfg.model, cfg.data
    mismatches = [
        name
        for name, a, b in (
            ("h", m.h, d.h),
            ("w", m.w, d.w),
            ("channels", m.channels, d.channels),
            ("k_classes", m.k_classes, d.k_classes),
            ("m_audio", m.m_audio, d.m_audio),
            ("d_model", m.d_model, d.d_model),
        )
        if a != b
    ]
    if mismatches:
        raise ConfigError(f"model/data mismatch on: {', '.join(mismatches)}")


def paper_scale_preset() -> RunConfig:
    """Published-scale dimensions; far beyond desk-scale runtime budgets."""
    cfg = RunConfig()
    cfg.model.n_f = 100
    cfg.model.n_v = 100
    cfg.model.window = 6
    cfg.model.k_max = 2
    return cfg
