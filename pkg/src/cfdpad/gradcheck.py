"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[..., Tensor], points: Sequence[np.ndarray], arg: int, index: int, h: float = 1e-5) -> float:
    def at(delta):
        args = [Tensor(p) for p in points]
        args[arg].data.flat[index] += delta
        return f(*args).item()

    return (at(h) - at(-h)) / (2 * h)


def finite_diff_check(
    f: Callable[..., Tensor],
    *points: np.ndarray,
    h: float = 1e-5,
    coords: Optional[Sequence[tuple[int, int]]] = None,
) -> float:
    """Compare the tape gradient of scalar ``f`` with central differences.

    Args:
        f: maps one Tensor per entry of ``points`` to a scalar Tensor.
        *points: where to evaluate; each is perturbed coordinate by coordinate.
        h: finite-difference step.
        coords: optional ``(argument, flat index)`` subset to check instead of
            every coordinate.

    Returns:
        max over checked coordinates of
        ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    points = [np.array(p, dtype=np.float64) for p in points]
    leaves = [Tensor(p, requires_grad=True) for p in points]
    f(*leaves).backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    if coords is None:
        coords = [(a, i) for a, p in enumerate(points) for i in range(p.size)]
    worst = 0.0
    for a, i in coords:
        num = numeric_grad(f, points, a, i, h)
        ana = float(analytic[a].flat[i])
        worst = max(worst, abs(ana - num) / max(1e-8, abs(ana) + abs(num)))
    return worst
