"""Grad-CAM maps over the generator output and the channel-removal accuracy curve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .backbone import Model, classifier_forward, embedding_forward, generator_forward, spoof_score
from .data import Dataset
from .denoise import ChannelDistance
from .tensor import Tensor

CLASS_NAMES = ("live", "spoof")
ORDERS = ("descending", "ascending")


def class_index(target: Union[int, str]) -> int:
    if isinstance(target, str):
        if target not in CLASS_NAMES:
            raise ValueError(f"unknown class {target!r}; expected one of {CLASS_NAMES}")
        return CLASS_NAMES.index(target)
    if isinstance(target, (bool, np.bool_)) or int(target) != target or not 0 <= int(target) < len(CLASS_NAMES):
        raise ValueError(f"class index must be 0 (live) or 1 (spoof), got {target!r}")
    return int(target)


@dataclass
class CAMap:
    values: np.ndarray  # (h, w), nonnegative
    target_class: str
    alpha: np.ndarray  # (c,) channel weights
    z: int  # spatial positions averaged over

    def normalized(self) -> np.ndarray:
        """Values divided by their maximum (all-zero maps stay zero)."""
        peak = self.values.max()
        return self.values / peak if peak > 0 else np.zeros_like(self.values)


def grad_cam(model: Model, x, target_class: Union[int, str]) -> CAMap:
    """Grad-CAM of one image against the pre-softmax logit of ``target_class``.

    ``x`` is a single image (C, H, W) or a batch of one.
    """
    c = class_index(target_class)
    img = np.asarray(x, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[0] != 1:
        raise ValueError(f"grad_cam takes a single image, got shape {np.shape(x)}")
    model = model.frozen()
    a = Tensor(generator_forward(model, img).data, requires_grad=True)
    o = classifier_forward(model, embedding_forward(model, a))
    onehot = np.zeros(o.shape)
    onehot[0, c] = 1.0
    (o * onehot).sum().backward()
    grad = a.grad[0]
    z = grad.shape[1] * grad.shape[2]
    alpha = grad.sum(axis=(1, 2)) / z
    cam = np.maximum(np.tensordot(alpha, a.data[0], axes=(0, 0)), 0.0)
    return CAMap(cam, CLASS_NAMES[c], alpha, z)


def upsample_bilinear(values: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize a 2-D map to (h, w) with corner-aligned bilinear interpolation."""
    src_h, src_w = values.shape
    ys = np.linspace(0, src_h - 1, h)
    xs = np.linspace(0, src_w - 1, w)
    rows = np.stack([np.interp(xs, np.arange(src_w), r) for r in values])
    return np.stack([np.interp(ys, np.arange(src_h), col) for col in rows.T], axis=1)


def removal_order(dis: Union[ChannelDistance, np.ndarray], order: str) -> np.ndarray:
    """Channel indices by importance; ties resolve to the lower index in both orders."""
    d = dis.dis if isinstance(dis, ChannelDistance) else np.asarray(dis, dtype=np.float64)
    if order == "descending":
        return np.argsort(-d, kind="stable")
    if order == "ascending":
        return np.argsort(d, kind="stable")
    raise ValueError(f"order must be one of {ORDERS}, got {order!r}")


def accuracy(model: Model, ds: Dataset, keep: np.ndarray, chunk: int = 256) -> float:
    """Fraction classified correctly with spoof iff score >= 0.5."""
    scores = np.concatenate([spoof_score(model, ds.images[i : i + chunk], keep) for i in range(0, len(ds), chunk)])
    return float(np.mean((scores >= 0.5) == ds.is_spoof))


def channel_removal_curve(model: Model, ds: Dataset, dis, order: str = "descending") -> list[tuple[int, float]]:
    """Accuracy after zeroing the first r channels in importance ``order``, for r = 0..c."""
    ranked = removal_order(dis, order)
    c = model.config.feature_channels
    if ranked.shape[0] != c:
        raise ValueError(f"importance has {ranked.shape[0]} channels, model has {c}")
    curve = []
    keep = np.ones(c, dtype=bool)
    for r in range(c + 1):
        if r:
            keep[ranked[r - 1]] = False
        curve.append((r, accuracy(model, ds, keep.copy())))
    return curve


def curve_to_csv(curves: dict[str, list[tuple[int, float]]]) -> str:
    lines = ["removed,accuracy,order"]
    for order, curve in curves.items():
        lines.extend(f"{r},{acc!r},{order}" for r, acc in curve)
    return "\n".join(lines) + "\n"
