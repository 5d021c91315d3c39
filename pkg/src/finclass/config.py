"""``key = value`` config files merged with command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfigError
from .imgproc import PreprocessConfig
from .optim import TrainConfig


@dataclass
class RunConfig:
    """Everything the CLI reads from a config file."""

    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.2
    split_seed: int = 0
    hidden_units: int = 512
    keep_prob: float = 0.8
    data_root: str | None = None
    checkpoint: str | None = None
    report_out: str | None = None


_PRE_KEYS = {f.name: f.type for f in dataclasses.fields(PreprocessConfig)}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_TOP_KEYS = {
    f.name: f.type for f in dataclasses.fields(RunConfig) if f.name not in ("preprocess", "train")
}


def _coerce(key: str, typ: str, raw: str):
    typ = typ.replace(" | None", "")
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise InvalidConfigError(f"bad value for {key}: {raw!r} (expected {typ})") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(pairs: dict[str, object]) -> RunConfig:
    """Apply string (or already typed) overrides onto the defaults; unknown keys are rejected."""
    pre, train, top = {}, {}, {}
    for key, value in pairs.items():
        for table, dest in ((_PRE_KEYS, pre), (_TRAIN_KEYS, train), (_TOP_KEYS, top)):
            if key in table:
                dest[key] = _coerce(key, str(table[key]), value) if isinstance(value, str) else value
                break
        else:
            raise InvalidConfigError(f"unknown config key {key!r}")
    cfg = RunConfig(PreprocessConfig(**pre), TrainConfig(**train), **top)
    if cfg.preprocess.dist_metric not in ("L1", "L2"):
        raise InvalidConfigError(f"dist_metric must be L1 or L2, got {cfg.preprocess.dist_metric!r}")
    return cfg


def load_config(path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    pairs: dict[str, object] = {}
    if path is not None:
        pairs.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    pairs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(pairs)
