"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .backbone import ModelConfig
from .data import AugmentConfig, SynthConfig
from .losses import LossWeights

VARIANTS = ("baseline", "pa_only", "cfd_only", "cfd_regularize", "full")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    weights: LossWeights = field(default_factory=lambda: LossWeights(lambda2=0.1))
    k: int = 4
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    variant: str = "full"
    lr: float = 1e-3
    use_augment: bool = True
    apply_mask: bool = True
    dis_decay: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant {self.variant!r} not in {VARIANTS}")
        if not 1 <= self.k <= self.model.feature_channels:
            raise ConfigError(f"k={self.k} must lie in [1, {self.model.feature_channels}]")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 1 and batch_size >= 2")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if (self.model.input_h, self.model.input_w) != (self.synth.image_size, self.synth.image_size):
            raise ConfigError(
                f"model input {self.model.input_h}x{self.model.input_w} does not match image_size {self.synth.image_size}"
            )
        if self.dis_decay is not None and not 0 < self.dis_decay <= 1:
            raise ConfigError("dis_decay must lie in (0, 1]")
        n_classes = 1 + len(self.synth.train_materials)
        if self.batch_size < 2 * n_classes:
            raise ConfigError(f"batch_size {self.batch_size} < 2 x {n_classes} training classes")

    def replace(self, **changes) -> "RunConfig":
        """Copy with top-level or section fields changed (``seed`` also reseeds the data)."""
        sections = {"model": {}, "synth": {}, "augment": {}, "weights": {}}
        top = {}
        for key, value in changes.items():
            for name, sec in _SECTIONS.items():
                if key in _field_names(sec):
                    sections[name][key] = value
                    break
            else:
                top[key] = value
        if "seed" in top and "seed" not in sections["synth"]:
            sections["synth"]["seed"] = top["seed"]
        kw = {name: dataclasses.replace(getattr(self, name), **vals) for name, vals in sections.items() if vals}
        return dataclasses.replace(self, **kw, **top)

    def to_text(self) -> str:
        lines = []
        for name in _SECTIONS:
            sec = getattr(self, name)
            for f in dataclasses.fields(sec):
                key = "synth_seed" if (name, f.name) == ("synth", "seed") else f.name
                lines.append(f"{key} = {_fmt(getattr(sec, f.name))}")
        for f in dataclasses.fields(self):
            if f.name not in _SECTIONS:
                lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_SECTIONS = {"model": ModelConfig, "synth": SynthConfig, "augment": AugmentConfig, "weights": LossWeights}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)} - ({"seed"} if cls is SynthConfig else set())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(f"{c}/{s}" for c, s in v)
    return str(v)


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _cast(key: str, raw: str, default):
    try:
        if key == "generator_stages":
            return tuple(tuple(int(p) for p in item.split("/")) for item in raw.split(";") if item.strip())
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if default is None or key == "dis_decay":
            return None if raw.lower() in ("none", "") else float(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def config_from_mapping(kv: dict[str, str], seed: Optional[int] = None) -> RunConfig:
    kv = dict(kv)
    base = RunConfig()
    changes = {}
    if "synth_seed" in kv:
        changes["synth_seed"] = kv.pop("synth_seed")
    known = {f.name: getattr(base, f.name) for f in dataclasses.fields(base) if f.name not in _SECTIONS}
    for name in _SECTIONS:
        sec = getattr(base, name)
        for f in dataclasses.fields(sec):
            if name == "synth" and f.name == "seed":
                continue
            known[f.name] = getattr(sec, f.name)
    for key, raw in kv.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _cast(key, raw, known[key])
    if seed is not None:
        changes["seed"] = seed
    synth_seed = changes.pop("synth_seed", None)
    # image size drives the model's input dims unless they are given explicitly
    size = changes.get("image_size")
    if size is not None:
        changes.setdefault("input_h", size)
        changes.setdefault("input_w", size)
    try:
        cfg = base.replace(**changes)
        if synth_seed is not None:
            cfg = dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth, seed=int(synth_seed)))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str, seed: Optional[int] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_kv(fh.read()), seed)
