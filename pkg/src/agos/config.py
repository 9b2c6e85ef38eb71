"""Training configuration and its line-oriented ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


def _key(name: str, doc: str = ""):
    return {"key": name, "doc": doc}


@dataclass
class TrainConfig:
    # optimisation; defaults follow the published training recipe
    lr0: float = field(default=1e-4, metadata=_key("train.lr0"))
    lr_decay_factor: float = field(default=0.5, metadata=_key("train.lr_decay_factor"))
    lr_decay_every: int = field(default=30, metadata=_key("train.lr_decay_every"))
    epochs: int = field(default=120, metadata=_key("train.epochs"))
    batch_size: int = field(default=32, metadata=_key("train.batch_size"))
    adam_beta1: float = field(default=0.9, metadata=_key("adam.beta1"))
    adam_beta2: float = field(default=0.999, metadata=_key("adam.beta2"))
    adam_eps: float = field(default=1e-8, metadata=_key("adam.eps"))
    dropout: float = field(default=0.2, metadata=_key("train.dropout"))
    seed: int = field(default=0, metadata=_key("train.seed"))
    runs: int = field(default=10, metadata=_key("train.runs"))
    precision: str = field(default="single", metadata=_key("train.precision"))
    checkpoint_every: int = field(default=0, metadata=_key("train.checkpoint_every"))

    # loss
    alpha: float = field(default=5e-4, metadata=_key("loss.alpha"))
    weight_decay: float = field(default=5e-4, metadata=_key("loss.weight_decay"))
    enable_sealig: bool = field(default=True, metadata=_key("loss.enable_sealig"))

    # model
    classes: int = field(default=3, metadata=_key("model.classes"))
    variant: str = field(default="full", metadata=_key("model.variant"))
    agos_init_std: float = field(default=1e-3, metadata=_key("model.init_std"))
    grains: int = field(default=3, metadata=_key("mgp.grains"))
    channels: int = field(default=256, metadata=_key("mgp.channels"))
    tie_weights: bool = field(default=False, metadata=_key("mgp.tie_weights"))
    dilated: bool = field(default=True, metadata=_key("mgp.dilated"))
    differential: bool = field(default=True, metadata=_key("mgp.differential"))

    # backbone
    stem_channels: int = field(default=16, metadata=_key("backbone.stem_channels"))
    num_blocks: int = field(default=2, metadata=_key("backbone.num_blocks"))
    downsample: int = field(default=4, metadata=_key("backbone.downsample"))
    out_channels: int = field(default=32, metadata=_key("backbone.out_channels"))

    # data
    data_root: str = field(default="", metadata=_key("data.root"))
    train_ratios: tuple[float, ...] = field(default=(0.5,), metadata=_key("data.train_ratios"))
    image_size: int = field(default=64, metadata=_key("synth.image_size"))
    image_channels: int = field(default=3, metadata=_key("synth.channels"))
    samples_per_class: int = field(default=200, metadata=_key("synth.samples_per_class"))
    object_size_min: int = field(default=10, metadata=_key("synth.object_size_min"))
    object_size_max: int = field(default=26, metadata=_key("synth.object_size_max"))
    distractors_min: int = field(default=2, metadata=_key("synth.distractors_min"))
    distractors_max: int = field(default=6, metadata=_key("synth.distractors_max"))
    noise_std: float = field(default=0.05, metadata=_key("synth.noise_std"))
    synth_seed: int = field(default=1234, metadata=_key("synth.seed"))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lr0", "lr_decay_factor", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.runs < 1:
            raise ValueError("epochs, batch_size and runs must be >= 1")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.alpha < 0 or self.weight_decay < 0:
            raise ValueError("alpha and weight_decay must be >= 0")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")
        if self.grains < 0:
            raise ValueError("grains must be >= 0")
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise ValueError("backbone.downsample must be a power of two")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model.variant {self.variant!r}; expected one of {VARIANTS}")
        if any(not 0 < r < 1 for r in self.train_ratios):
            raise ValueError("train ratios must lie in (0, 1)")

    @property
    def dtype(self):
        import numpy as np

        return np.float64 if self.precision == "double" else np.float32

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_items(self) -> list[tuple[str, str]]:
        return [(f.metadata["key"], _format(getattr(self, f.name))) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        overrides = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            overrides[k] = v
        return (base or cls()).with_overrides(overrides)

    @classmethod
    def load(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"), base)

    def with_overrides(self, overrides: dict[str, str]) -> "TrainConfig":
        by_key = {f.metadata["key"]: f for f in fields(self)}
        changes = {}
        for k, v in overrides.items():
            if k not in by_key:
                raise KeyError(f"unknown config key {k!r}")
            f = by_key[k]
            changes[f.name] = _parse(v, type(getattr(self, f.name)))
        return self.replace(**changes)


VARIANTS = ("full", "backbone", "mgp", "mgp_ssf")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is tuple:
        return tuple(float(x) for x in text.split(",") if x.strip())
    if kind is int:
        return int(float(text)) if "e" in text.lower() else int(text)
    return kind(text)


def desk_config(**changes) -> TrainConfig:
    """Configuration used for the synthetic toy runs (64x64 inputs, 32 channels)."""
    base = TrainConfig(
        channels=32,
        epochs=30,
        batch_size=16,
        lr0=2e-3,
        agos_init_std=0.05,
        runs=2,
    )
    return base.replace(**changes)


def tiny_config(**changes) -> TrainConfig:
    """8x8 double-precision model used for gradient checking."""
    base = TrainConfig(
        precision="double",
        image_size=8,
        downsample=2,
        stem_channels=4,
        num_blocks=1,
        out_channels=4,
        channels=4,
        grains=2,
        classes=3,
        dropout=0.0,
        agos_init_std=0.5,
    )
    return base.replace(**changes)
