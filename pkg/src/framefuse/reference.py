"""Straight-line reference fuser used to cross-check the vectorized path.

Everything here is deliberately plain Python over lists of floats: no numpy,
no code shared with :mod:`framefuse.fusion`. It exists so tests can compare
the optimized implementation against an independently written execution of
the same procedure, element by element.
"""

from __future__ import annotations

import math
from typing import Sequence

__all__ = ["reference_iterative_fusion", "reference_single_shot"]

_NORM_EPS = 1e-8
_DENSITY_EPS = 1e-8


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na < _NORM_EPS or nb < _NORM_EPS:
        return 0.0
    value = sum(x * y for x, y in zip(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


def _top_pairs(sims: list[float], r: int) -> set[int]:
    ranked = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return set(ranked[:r])


def _one_round(
    frames: list[list[float]], density: list[float], r: int
) -> tuple[list[list[float]], list[float]]:
    sims = [_cosine(frames[j], frames[j + 1]) for j in range(len(frames) - 1)]
    chosen = _top_pairs(sims, r)

    spans: list[tuple[int, int]] = []
    start = 0
    for j in range(len(frames) - 1):
        if j not in chosen:
            spans.append((start, j + 1))
            start = j + 1
    spans.append((start, len(frames)))

    new_frames: list[list[float]] = []
    new_density: list[float] = []
    for s, e in spans:
        mass = sum(density[s:e])
        if mass < _DENSITY_EPS:
            weights = [1.0 / (e - s)] * (e - s)
        else:
            weights = [density[j] / mass for j in range(s, e)]
        fused = [0.0] * len(frames[0])
        for offset, j in enumerate(range(s, e)):
            w = weights[offset]
            for k in range(len(fused)):
                fused[k] += w * frames[j][k]
        new_frames.append(fused)
        new_density.append(mass)
    return new_frames, new_density


def reference_iterative_fusion(
    frames: Sequence[Sequence[float]], density: Sequence[float], target: int
) -> tuple[list[list[float]], list[float]]:
    """Run the full halving-schedule fusion in plain Python.

    Returns ``(frames, carried_density)``; identity when the input is not
    longer than ``target``.
    """
    cur = [[float(x) for x in row] for row in frames]
    dens = [float(d) for d in density]
    if len(cur) <= target:
        return cur, dens
    length = len(cur)
    while length > target:
        nxt = length // 2 if length > 2 * target else target
        cur, dens = _one_round(cur, dens, length - nxt)
        length = nxt
        assert len(cur) == length
    return cur, dens


def reference_single_shot(
    frames: Sequence[Sequence[float]], density: Sequence[float], target: int
) -> tuple[list[list[float]], list[float]]:
    """Single merge round removing ``len(frames) - target`` pairs at once."""
    cur = [[float(x) for x in row] for row in frames]
    dens = [float(d) for d in density]
    if len(cur) <= target:
        return cur, dens
    return _one_round(cur, dens, len(cur) - target)
