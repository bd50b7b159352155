"""Channel importance scoring and suppression of low-importance ("noise") channels.

A channel's importance is how much the live probability moves when that
channel of the generator output is zeroed, accumulated over batches.  Only
the top-k channels are propagated; the rest are zeroed on the tape so they
receive no gradient either.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .backbone import Model, classifier_forward, embedding_forward, generator_forward
from .tensor import Tensor


@dataclass
class ChannelDistance:
    """Cumulative per-channel importance ``dis`` and the number of batches folded in.

    ``decay`` (off by default) scales the running total before each update.
    """

    dis: np.ndarray
    batches_seen: int = 0
    decay: Optional[float] = None

    @classmethod
    def zeros(cls, channels: int, decay: Optional[float] = None) -> "ChannelDistance":
        return cls(np.zeros(channels), 0, decay)

    @property
    def channels(self) -> int:
        return self.dis.shape[0]

    def copy(self) -> "ChannelDistance":
        return ChannelDistance(self.dis.copy(), self.batches_seen, self.decay)


@dataclass
class DenoiseMask:
    keep: np.ndarray
    k: int = field(init=False)

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        self.k = int(self.keep.sum())

    @classmethod
    def all_channels(cls, channels: int) -> "DenoiseMask":
        return cls(np.ones(channels, dtype=bool))

    def as_weights(self) -> np.ndarray:
        return self.keep.astype(np.float64)


def _data(f) -> np.ndarray:
    return f.data if isinstance(f, Tensor) else np.asarray(f, dtype=np.float64)


def ablate_channel(f, i: int) -> np.ndarray:
    """Copy of ``f`` (N, c, h, w) with channel ``i`` zeroed in every sample."""
    arr = _data(f)
    if arr.ndim != 4:
        raise ValueError(f"ablate_channel expects (N, c, h, w), got {arr.shape}")
    if not 0 <= i < arr.shape[1]:
        raise IndexError(f"channel {i} out of range for {arr.shape[1]} channels")
    out = arr.copy()
    out[:, i] = 0.0
    return out


def live_probability(model: Model, f) -> np.ndarray:
    with T.no_grad():
        o = classifier_forward(model, embedding_forward(model, Tensor(_data(f))))
        return T.softmax(o).data[:, 0].copy()


def importance_increments(model: Model, f) -> np.ndarray:
    """Batch-mean ``|a - a_i|`` for every channel ``i``, without touching ``dis``.

    E opens with a convolution, which is linear in its input, so the
    pre-activation with channel ``i`` zeroed is the full pre-activation minus
    channel ``i``'s own contribution.  All ``c`` ablations then cost about one
    extra convolution instead of ``c``.
    """
    arr = _data(f)
    n, c = arr.shape[:2]
    if c != model.config.feature_channels:
        raise ValueError(f"feature map has {c} channels, model expects {model.config.feature_channels}")
    w = model.params["e.conv.w"].data
    kh, kw = w.shape[2:]
    xp = np.pad(arr, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    per_channel = np.einsum("nchwij,ocij->cnohw", cols, w, optimize=True)
    full = per_channel.sum(axis=0) + model.params["e.conv.b"].data[None, :, None, None]

    def live_prob(pre: np.ndarray) -> np.ndarray:
        pooled = np.maximum(pre, 0.0).mean(axis=(-2, -1))
        with T.no_grad():
            e = T.dense(Tensor(pooled.reshape(-1, pooled.shape[-1])), model.params["e.fc.w"], model.params["e.fc.b"])
            return T.softmax(classifier_forward(model, e)).data[:, 0]

    a = live_prob(full)
    a_abl = live_prob(full[None] - per_channel).reshape(c, n)
    return np.abs(a[None, :] - a_abl).mean(axis=1)


def importance_update(model: Model, f, dis: ChannelDistance) -> ChannelDistance:
    """Fold one batch into the cumulative channel distance (in place; also returned)."""
    inc = importance_increments(model, f)
    if inc.shape[0] != dis.channels:
        raise ValueError(f"ChannelDistance has {dis.channels} channels, feature map has {inc.shape[0]}")
    if dis.decay is not None:
        dis.dis = dis.decay * dis.dis
    dis.dis = dis.dis + inc
    dis.batches_seen += 1
    return dis


def select_topk(dis: ChannelDistance | np.ndarray, k: int) -> DenoiseMask:
    """Keep the ``k`` largest entries; ties go to the lower channel index."""
    d = dis.dis if isinstance(dis, ChannelDistance) else np.asarray(dis, dtype=np.float64)
    if not 1 <= k <= d.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {d.shape[0]}]")
    order = np.argsort(-d, kind="stable")
    keep = np.zeros(d.shape[0], dtype=bool)
    keep[order[:k]] = True
    return DenoiseMask(keep)


def select_bottomk(dis: ChannelDistance | np.ndarray, k: int) -> DenoiseMask:
    """Keep the ``k`` smallest entries (the regularization contrast); ties to lower index."""
    d = dis.dis if isinstance(dis, ChannelDistance) else np.asarray(dis, dtype=np.float64)
    if not 1 <= k <= d.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {d.shape[0]}]")
    order = np.argsort(d, kind="stable")
    keep = np.zeros(d.shape[0], dtype=bool)
    keep[order[:k]] = True
    return DenoiseMask(keep)


def suppress_channels(f: Tensor, mask: DenoiseMask) -> Tensor:
    """Zero the channels not kept by ``mask``; on-tape, so they pass no gradient."""
    f = f if isinstance(f, Tensor) else Tensor(f)
    if f.ndim != 4 or mask.keep.shape != (f.shape[1],):
        raise ValueError(f"mask of length {mask.keep.shape[0]} does not fit feature map {f.shape}")
    return f * mask.as_weights()[None, :, None, None]


def denoised_logits(model: Model, x, mask: DenoiseMask) -> tuple[Tensor, Tensor, Tensor]:
    """Clean logits ``o`` plus suppressed-path embedding and logits from one generator pass."""
    f = generator_forward(model, x)
    o = classifier_forward(model, embedding_forward(model, f))
    e_dn = embedding_forward(model, suppress_channels(f, mask))
    return o, e_dn, classifier_forward(model, e_dn)
