"""Run configuration: one flat record serialized verbatim into every
checkpoint and report, so any artifact can be traced back to its settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import LABEL_NORM_MODES
from .errors import ConfigInvalid
from .eri_head import EriHead
from .metrics import LOSS_KINDS
from .mtl_dan import DESCRIPTOR_MODES, MtlDanModel, set_frozen
from .nn import BackboneConfig


@dataclass
class RunConfig:
    # architecture
    input_size: tuple[int, int, int] = (3, 32, 32)
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    attn_heads: int = 4
    attn_reduction: int = 4
    lstm_hidden: int = 64
    lstm_layers: int = 1
    descriptor_mode: str = "activated"
    # training
    loss_kind: str = "pcc"
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    max_steps: int = 0  # 0 means no cap
    seed: int = 0
    freeze_extractor: bool = True
    label_norm: str = "minus1-over-99"
    extractor_workers: int = 1
    cache_descriptors: bool = True
    # paths
    manifest: str = ""
    data_root: str = ""
    out_dir: str = "run"

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.stage_channels = tuple(int(v) for v in self.stage_channels)
        self.blocks_per_stage = tuple(int(v) for v in self.blocks_per_stage)
        self.validate()

    def validate(self) -> "RunConfig":
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigInvalid(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.label_norm not in LABEL_NORM_MODES:
            raise ConfigInvalid(f"label_norm must be one of {LABEL_NORM_MODES}, got {self.label_norm!r}")
        if self.descriptor_mode not in DESCRIPTOR_MODES:
            raise ConfigInvalid(f"descriptor_mode must be one of {DESCRIPTOR_MODES}")
        if self.batch_size < 2:
            raise ConfigInvalid(f"batch_size must be >= 2 for correlation training, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigInvalid("epochs must be >= 1")
        if self.max_steps < 0:
            raise ConfigInvalid("max_steps must be >= 0 (0 disables the cap)")
        if self.lstm_hidden < 1 or self.lstm_layers < 1:
            raise ConfigInvalid("lstm_hidden and lstm_layers must be >= 1")
        if self.attn_heads < 1:
            raise ConfigInvalid("attn_heads must be >= 1")
        if self.extractor_workers < 1:
            raise ConfigInvalid("extractor_workers must be >= 1")
        if self.lr < 0:
            raise ConfigInvalid("lr must be >= 0")
        BackboneConfig(self.stage_channels, self.blocks_per_stage, self.input_size)
        return self

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(self.stage_channels, self.blocks_per_stage, self.input_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in mapping.items():
            if key not in known:
                raise ConfigInvalid(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key].name, value)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_mapping(json.loads(text))


_TUPLE_FIELDS = {"input_size": 3, "stage_channels": 4, "blocks_per_stage": 4}
_INT_FIELDS = {
    "attn_heads",
    "attn_reduction",
    "lstm_hidden",
    "lstm_layers",
    "batch_size",
    "epochs",
    "max_steps",
    "seed",
    "extractor_workers",
}
_FLOAT_FIELDS = {"lr"}
_BOOL_FIELDS = {"freeze_extractor", "cache_descriptors"}


def _coerce(name: str, value):
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = value.replace("x", ",").split(",")
        parts = tuple(int(v) for v in value)
        if len(parts) != _TUPLE_FIELDS[name]:
            raise ConfigInvalid(f"{name} needs {_TUPLE_FIELDS[name]} integers, got {value!r}")
        return parts
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return float(value)
    if name in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalid(f"{name} expects a boolean, got {value!r}")
    return str(value)


def parse_config_file(path) -> dict:
    """UTF-8 key=value lines; blank lines and # comments are skipped."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def build_models(config: RunConfig) -> tuple[MtlDanModel, EriHead]:
    """Construct the extractor and head deterministically from the config seed."""
    rng = np.random.default_rng(config.seed)
    extractor = MtlDanModel(
        config.backbone_config(),
        rng,
        attn_heads=config.attn_heads,
        attn_reduction=config.attn_reduction,
        descriptor_mode=config.descriptor_mode,
    )
    head = EriHead(rng, hidden_dim=config.lstm_hidden, num_layers=config.lstm_layers)
    set_frozen(extractor, config.freeze_extractor)
    return extractor, head
