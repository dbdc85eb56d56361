"""Run configuration, named presets and the INI config-file reader.

Config files are INI with a single ``[run]`` section. Keys are the
``RunConfig`` / ``ModelConfig`` field names, values are plain text::

    [run]
    preset = tcg
    data = tcg_train.jsonl
    epochs = 70
    variant = temporal_only
    held_out = s1, s2

A ``preset`` key (or the ``--preset`` flag) is applied first; every other
key overrides it.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace

from .model import ModelConfig
from .optim import LrSchedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    optimizer: str = "adam"
    schedule: str = "flat_then_cosine"
    lr: float = 1e-3
    final_lr: float = 1e-4
    switch_epoch: int = 0
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    data: str | None = None
    split_key: str | None = None
    held_out: tuple = ()
    val_values: tuple = ()
    root_joint: int | None = None

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.schedule, self.lr, self.final_lr, self.epochs, self.switch_epoch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["held_out"] = list(self.held_out)
        d["val_values"] = list(self.val_values)
        return d


PRESETS = {
    # 70 epochs, balanced batch 1024, Ranger, lr 1e-3 flat for 50 epochs then cosine to 1e-4
    "tcg": RunConfig(
        model=ModelConfig(n_layers=4, n_joints=17, width=512, seq_len=24, spatial_hidden=32, temporal_hidden=256, n_classes=4),
        optimizer="ranger",
        schedule="flat_then_cosine",
        lr=1e-3,
        final_lr=1e-4,
        switch_epoch=50,
        epochs=70,
        batch_size=1024,
    ),
    # 80 epochs, balanced batch 2048, Adam lr 1e-3 cosine-annealed by a factor 0.1
    "drive-act": RunConfig(
        model=ModelConfig(n_layers=2, n_joints=13, width=512, seq_len=90, spatial_hidden=64, temporal_hidden=256, n_classes=12),
        optimizer="adam",
        schedule="cosine",
        lr=1e-3,
        final_lr=1e-4,
        epochs=80,
        batch_size=2048,
    ),
    # desk-scale model for the synthetic corpus
    "tiny": RunConfig(
        model=ModelConfig(n_layers=2, n_joints=5, width=32, seq_len=16, spatial_hidden=16, temporal_hidden=32, n_classes=4),
        optimizer="adam",
        schedule="flat_then_cosine",
        lr=1e-3,
        final_lr=1e-4,
        switch_epoch=20,
        epochs=30,
        batch_size=32,
    ),
}

_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "model"}


def _convert(name: str, ftype: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if name in ("held_out", "val_values"):
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if text.lower() in ("none", "") and "None" in ftype:
            return None
        if ftype.startswith("int"):
            return int(text)
        if ftype.startswith("float"):
            return float(text)
        if name in ("variant", "se_mode", "ln_axis", "se_semantics", "schedule"):
            return text.replace("-", "_")
        return text
    except ValueError:
        raise ConfigError(f"field {name!r}: cannot parse {raw!r} as {ftype}") from None


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{field: value}`` pairs (strings are parsed) to a run config."""
    model_changes, run_changes = {}, {}
    for key, raw in overrides.items():
        key = key.replace("-", "_")
        if key in _MODEL_FIELDS:
            model_changes[key] = _convert(key, _MODEL_FIELDS[key].type, raw)
        elif key in _RUN_FIELDS:
            run_changes[key] = _convert(key, _RUN_FIELDS[key].type, raw)
        else:
            raise ConfigError(f"field {key!r}: unknown setting")
    try:
        model = cfg.model.replace(**model_changes) if model_changes else cfg.model
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = replace(cfg, model=model, **run_changes)
    validate(out)
    return out


def validate(cfg: RunConfig) -> None:
    if cfg.optimizer not in ("adam", "radam", "ranger"):
        raise ConfigError(f"field 'optimizer': must be adam, radam or ranger, got {cfg.optimizer!r}")
    for name in ("epochs", "batch_size"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"field {name!r}: must be >= 1")
    if cfg.lr < 0 or cfg.final_lr < 0:
        raise ConfigError("field 'lr': learning rates must be non-negative")
    if cfg.root_joint is not None and not 0 <= cfg.root_joint < cfg.model.n_joints:
        raise ConfigError(f"field 'root_joint': {cfg.root_joint} outside [0, {cfg.model.n_joints})")
    try:
        cfg.lr_schedule()
    except ValueError as e:
        raise ConfigError(f"schedule: {e}") from None


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"field 'preset': unknown preset {name!r} (have {sorted(PRESETS)})") from None


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    if "run" not in parser:
        raise ConfigError(f"{path}: missing [run] section")
    return dict(parser["run"])


def build(preset_name: str | None = None, config_path=None, overrides: dict | None = None) -> RunConfig:
    values = read_config_file(config_path) if config_path else {}
    name = values.pop("preset", None) or preset_name
    if preset_name and name != preset_name and config_path:
        name = preset_name  # the command line wins
    base = preset(name) if name else PRESETS["tiny"]
    values.update(overrides or {})
    return apply_overrides(base, values)
