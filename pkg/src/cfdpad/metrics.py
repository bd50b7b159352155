"""Presentation-attack-detection error metrics over spoof scores.

Convention throughout: a sample is classified spoof iff ``score >= threshold``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    is_spoof: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.is_spoof, dtype=bool).reshape(-1)
        if s.shape != y.shape:
            raise ValueError(f"{s.shape[0]} scores but {y.shape[0]} labels")
        if s.size == 0:
            raise ValueError("empty ScoreSet")
        if np.isnan(s).any():
            raise ValueError("NaN score in ScoreSet")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "is_spoof", y)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, bool]]) -> "ScoreSet":
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs], dtype=np.float64), np.array([p[1] for p in pairs], dtype=bool))

    @property
    def live(self) -> np.ndarray:
        return self.scores[~self.is_spoof]

    @property
    def spoof(self) -> np.ndarray:
        return self.scores[self.is_spoof]

    def require_both_classes(self) -> None:
        if self.is_spoof.all() or not self.is_spoof.any():
            raise ValueError("rate metrics need at least one live and one spoof score")


class RocCurve(NamedTuple):
    thresholds: np.ndarray
    fdr: np.ndarray
    tdr: np.ndarray


class ThresholdErrors(NamedTuple):
    apcer: float
    bpcer: float
    acer: float
    ace: float


def _rate_at_or_above(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n = sorted_scores.size
    return (n - np.searchsorted(sorted_scores, thresholds, side="left")) / n


def roc(scores: ScoreSet) -> RocCurve:
    """ROC points at every distinct score plus one sentinel below and one above.

    Thresholds ascend, so FDR and TDR are both nonincreasing along the curve.
    """
    scores.require_both_classes()
    uniq = np.unique(scores.scores)
    thresholds = np.concatenate(([uniq[0] - 1.0], uniq, [uniq[-1] + 1.0]))
    fdr = _rate_at_or_above(np.sort(scores.live), thresholds)
    tdr = _rate_at_or_above(np.sort(scores.spoof), thresholds)
    return RocCurve(thresholds, fdr, tdr)


def tdr_at_fdr(scores: ScoreSet, q: float = 0.01) -> float:
    """Largest TDR among ROC points whose FDR does not exceed ``q``."""
    curve = roc(scores)
    ok = curve.fdr <= q
    return float(curve.tdr[ok].max()) if ok.any() else 0.0


def eer(scores: ScoreSet) -> float:
    """Equal error rate of APCER(t) = 1 - TDR(t) and BPCER(t) = FDR(t).

    If the two rates are equal at some ROC point that common value is
    returned.  Otherwise the crossing between the bracketing pair of
    consecutive points is located by linear interpolation.
    """
    curve = roc(scores)
    apcer = 1.0 - curve.tdr
    bpcer = curve.fdr
    diff = apcer - bpcer
    hit = np.flatnonzero(diff == 0)
    if hit.size:
        i = hit[0]
        return float((apcer[i] + bpcer[i]) / 2)
    # diff runs from -1 at the low sentinel to +1 at the high one
    j = int(np.flatnonzero(diff > 0)[0])
    i = j - 1
    s = -diff[i] / (diff[j] - diff[i])
    a = apcer[i] + s * (apcer[j] - apcer[i])
    b = bpcer[i] + s * (bpcer[j] - bpcer[i])
    return float((a + b) / 2)


def fixed_threshold_errors(scores: ScoreSet, t: float = 0.5) -> ThresholdErrors:
    """APCER, BPCER, ACER and ACE at a fixed decision threshold.

    ACE is reported as the ACER at ``t`` (mean of the two class error rates).
    """
    scores.require_both_classes()
    apcer = float(np.mean(scores.spoof < t))
    bpcer = float(np.mean(scores.live >= t))
    acer = (apcer + bpcer) / 2
    return ThresholdErrors(apcer, bpcer, acer, acer)


METRIC_NAMES = ("ace", "tdr_at_fdr_1", "eer", "apcer", "bpcer", "acer")


def all_metrics(scores: ScoreSet, threshold: float = 0.5, q: float = 0.01) -> dict[str, float]:
    fixed = fixed_threshold_errors(scores, threshold)
    return {
        "ace": fixed.ace,
        "tdr_at_fdr_1": tdr_at_fdr(scores, q),
        "eer": eer(scores),
        "apcer": fixed.apcer,
        "bpcer": fixed.bpcer,
        "acer": fixed.acer,
    }


# CSV surfaces

def scores_to_csv(ids: Iterable[int], scores: ScoreSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "score", "is_spoof"])
    for i, s, y in zip(ids, scores.scores, scores.is_spoof):
        w.writerow([int(i), repr(float(s)), int(bool(y))])
    return buf.getvalue()


def scores_from_csv(text: str) -> tuple[list[int], ScoreSet]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["id", "score", "is_spoof"]:
        raise ValueError("score CSV must start with header 'id,score,is_spoof'")
    ids, vals, labels = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"score CSV line {lineno}: expected 3 fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            vals.append(float(row[1]))
            flag = int(row[2])
        except ValueError as exc:
            raise ValueError(f"score CSV line {lineno}: {exc}") from None
        if flag not in (0, 1):
            raise ValueError(f"score CSV line {lineno}: is_spoof must be 0 or 1")
        labels.append(bool(flag))
    return ids, ScoreSet(np.array(vals), np.array(labels, dtype=bool))


def metrics_to_csv(rows: list[dict[str, object]]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def roc_to_csv(curve: RocCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fdr", "tdr"])
    for t, f, d in zip(*curve):
        w.writerow([repr(float(t)), repr(float(f)), repr(float(d))])
    return buf.getvalue()
