"""Cross-entropy, batch-hard triplet loss over attack types, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if min(lams) < 0 or max(lams) <= 0:
            raise ValueError(f"loss weights must be nonnegative with at least one positive: {lams}")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


def liveness_labels(attack) -> np.ndarray:
    """Binary label per sample: 0 = live (attack id 0), 1 = spoof."""
    return (np.asarray(attack) != 0).astype(np.int64)


def cross_entropy(o: Tensor, y) -> Tensor:
    """Batch mean of ``-log softmax(o)[y]``."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != o.shape[0]:
        raise ValueError(f"labels of shape {y.shape} do not match logits {o.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"liveness labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    return -T.pick(T.log_softmax(o), y.astype(np.int64)).mean()


def squared_distances(e: np.ndarray) -> np.ndarray:
    diff = e[:, None, :] - e[None, :, :]
    return (diff * diff).sum(axis=2)


def mine_triplets(e, attack) -> list[tuple[int, int, int]]:
    """Batch-hard triplets: for each anchor, farthest same-class and nearest other-class sample.

    Anchors without a same-class partner or without any other-class sample are
    skipped.  Ties resolve to the lower index.
    """
    emb = e.data if isinstance(e, Tensor) else np.asarray(e, dtype=np.float64)
    a = np.asarray(attack)
    d = squared_distances(emb)
    n = len(a)
    idx = np.arange(n)
    triples = []
    for i in range(n):
        same = (a == a[i]) & (idx != i)
        other = a != a[i]
        if not same.any() or not other.any():
            continue
        p = int(np.argmax(np.where(same, d[i], -np.inf)))
        q = int(np.argmin(np.where(other, d[i], np.inf)))
        triples.append((i, p, q))
    return triples


def pa_adaptation(e: Tensor, attack, alpha: float = 1.0) -> Tensor:
    """Mean hinge ``max(|e_a - e_p|^2 - |e_a - e_n|^2 + alpha, 0)`` over mined triplets."""
    triples = mine_triplets(e, attack)
    if not triples:
        return Tensor(0.0)
    anc, pos, neg = (list(col) for col in zip(*triples))
    ea = T.take_rows(e, anc)
    d_ap = ((ea - T.take_rows(e, pos)) ** 2).sum(axis=1)
    d_an = ((ea - T.take_rows(e, neg)) ** 2).sum(axis=1)
    return T.relu(d_ap - d_an + alpha).mean()


def combined_loss(o: Tensor, o_dn: Tensor, e_dn: Tensor, y, attack, w: LossWeights) -> Tensor:
    """``lambda1*CE(o, y) + lambda2*PA(e_dn, attack) + lambda3*CE(o_dn, y)``; zero-weight terms are skipped."""
    total = Tensor(0.0)
    if w.lambda1:
        total = total + w.lambda1 * cross_entropy(o, y)
    if w.lambda2:
        total = total + w.lambda2 * pa_adaptation(e_dn, attack, w.margin)
    if w.lambda3:
        total = total + w.lambda3 * cross_entropy(o_dn, y)
    return total
