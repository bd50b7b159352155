"""Toy convolutional backbone split into generator, embedding and classifier."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

STREAM_INIT = 0


@dataclass(frozen=True)
class ModelConfig:
    input_h: int = 32
    input_w: int = 32
    input_ch: int = 1
    feature_channels: int = 16
    embed_dim: int = 32
    embed_channels: int = 16
    n_classes: int = 2
    generator_stages: tuple[tuple[int, int], ...] = ((8, 2), (16, 2), (16, 1))

    def __post_init__(self):
        for name in ("input_h", "input_w", "input_ch", "feature_channels", "embed_dim", "embed_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.n_classes != 2:
            raise ValueError("ModelConfig.n_classes is fixed at 2 (live, spoof)")
        if not self.generator_stages:
            raise ValueError("ModelConfig.generator_stages must not be empty")
        if self.generator_stages[-1][0] != self.feature_channels:
            raise ValueError(
                f"last generator stage has {self.generator_stages[-1][0]} channels, "
                f"feature_channels is {self.feature_channels}"
            )

    @classmethod
    def reference_scale(cls) -> "ModelConfig":
        """224x224x3 input giving a 7x7x160 feature map."""
        return cls(
            input_h=224,
            input_w=224,
            input_ch=3,
            feature_channels=160,
            embed_dim=64,
            embed_channels=64,
            generator_stages=((16, 2), (24, 2), (32, 2), (96, 2), (160, 2)),
        )

    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.input_h, self.input_w
        for _, s in self.generator_stages:
            h = (h + 2 - 3) // s + 1
            w = (w + 2 - 3) // s + 1
        return self.feature_channels, h, w

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "generator_stages":
                v = ";".join(f"{c}/{s}" for c, s in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name == "generator_stages":
                kwargs[f.name] = tuple(
                    tuple(int(p) for p in item.split("/")) for item in raw.split(";") if item.strip()
                )
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


@dataclass
class Model:
    """Parameters of the three sub-networks.  Names carry a ``g.``/``e.``/``c.`` prefix."""

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    @property
    def theta_g(self) -> dict[str, Tensor]:
        return self.group("g")

    @property
    def theta_e(self) -> dict[str, Tensor]:
        return self.group("e")

    @property
    def theta_c(self) -> dict[str, Tensor]:
        return self.group("c")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            p = self.params[k]
            if v.shape != p.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {p.shape}")
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"parameter {k!r} became non-finite")
            p.data = np.array(v, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def frozen(self) -> "Model":
        """View of the same values as constants, for read-only passes that still call backward."""
        return Model(self.config, {k: Tensor(v.data) for k, v in self.params.items()})

    def fingerprint(self) -> str:
        return T.parameters_hash(self.arrays().values())


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = cfg.input_ch
    for i, (cout, _) in enumerate(cfg.generator_stages):
        shapes[f"g.conv{i}.w"] = (cout, cin, 3, 3)
        shapes[f"g.conv{i}.b"] = (cout,)
        cin = cout
    shapes["e.conv.w"] = (cfg.embed_channels, cfg.feature_channels, 3, 3)
    shapes["e.conv.b"] = (cfg.embed_channels,)
    shapes["e.fc.w"] = (cfg.embed_dim, cfg.embed_channels)
    shapes["e.fc.b"] = (cfg.embed_dim,)
    shapes["c.fc.w"] = (cfg.n_classes, cfg.embed_dim)
    shapes["c.fc.b"] = (cfg.n_classes,)
    return shapes


def init_model(config: ModelConfig, seed: int) -> Model:
    """Fan-in scaled Gaussian weights (std sqrt(2/fan_in)), zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_INIT]))
    params = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = Tensor(arr, requires_grad=True)
    return Model(config, params)


def model_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> Model:
    shapes = _param_shapes(config)
    params = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise ValueError(f"missing parameter {name!r}")
        if tuple(arrays[name].shape) != shape:
            raise ValueError(f"parameter {name!r}: shape {arrays[name].shape}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True)
    return Model(config, params)


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def generator_forward(model: Model, x) -> Tensor:
    """G: image batch (N, Cin, H, W) -> feature map f (N, c, h, w)."""
    cfg = model.config
    x = _as_input(x)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_ch, cfg.input_h, cfg.input_w):
        raise ValueError(
            f"generator input shape {x.shape} does not match (N, {cfg.input_ch}, {cfg.input_h}, {cfg.input_w})"
        )
    h = x
    for i, (_, stride) in enumerate(cfg.generator_stages):
        h = T.relu(T.conv2d(h, model.params[f"g.conv{i}.w"], model.params[f"g.conv{i}.b"], stride=stride, pad=1))
    if h.shape[1] != cfg.feature_channels:
        raise AssertionError(f"generator produced {h.shape[1]} channels, config says {cfg.feature_channels}")
    return h


def embedding_forward(model: Model, f) -> Tensor:
    """E: conv3x3 + relu, global average pool, dense to embed_dim."""
    cfg = model.config
    f = _as_input(f)
    if f.ndim != 4 or f.shape[1] != cfg.feature_channels:
        raise ValueError(f"embedding input shape {f.shape} needs {cfg.feature_channels} channels")
    h = T.relu(T.conv2d(f, model.params["e.conv.w"], model.params["e.conv.b"], stride=1, pad=1))
    return T.dense(T.global_avgpool(h), model.params["e.fc.w"], model.params["e.fc.b"])


def classifier_forward(model: Model, e) -> Tensor:
    """C: affine logits, column 0 = live, column 1 = spoof."""
    e = _as_input(e)
    if e.ndim != 2 or e.shape[1] != model.config.embed_dim:
        raise ValueError(f"classifier input shape {e.shape} needs embed_dim {model.config.embed_dim}")
    return T.dense(e, model.params["c.fc.w"], model.params["c.fc.b"])


def forward(model: Model, x, keep: Optional[np.ndarray] = None) -> Tensor:
    """Logits of the full network, optionally with a channel keep-mask applied to f."""
    f = generator_forward(model, x)
    if keep is not None:
        f = f * np.asarray(keep, dtype=np.float64)[None, :, None, None]
    return classifier_forward(model, embedding_forward(model, f))


def spoof_score(model: Model, x, keep: Optional[np.ndarray] = None) -> np.ndarray:
    """Spoof probability ``r[:, 1]`` per sample; live probability is ``1 - score``."""
    with T.no_grad():
        r = T.softmax(forward(model, x, keep))
    return r.data[:, 1].copy()
