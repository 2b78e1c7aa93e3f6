"""Similarity-driven iterative span fusion and the baseline fusers.

The compression loop repeatedly halves the sequence: per round it scores
adjacent-frame cosine similarity, marks the ``r`` most similar pairs, groups
chained pairs into spans, and merges each span into a single frame using
per-frame content density as convex weights. Merged frames carry the *sum*
of their constituents' densities forward, so spans that absorbed a lot of
content stay influential in later rounds; with uniform input densities the
whole procedure degenerates to averaging the original frames under each
span, which is exactly the density-free ``baseline_mostsim``.

All fusers obey the same length contract: the output has ``L`` frames when
``T >= L`` and is the unchanged input when ``T < L`` (compression never
fabricates frames).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .frameio import FrameSequence, read_fseq, write_fseq
from .seeding import substream

__all__ = [
    "ScheduleStep",
    "CondensedSequence",
    "NORM_EPSILON",
    "DENSITY_EPSILON",
    "adjacent_similarity",
    "build_schedule",
    "select_pairs",
    "group_spans",
    "merge_spans",
    "iterative_fusion",
    "single_shot_fusion",
    "baseline_random",
    "baseline_avgpool",
    "baseline_mostsim",
    "write_condensed",
    "read_condensed",
]

# below this, a frame norm counts as silent (similarity 0) and a span's
# density mass counts as empty (uniform fallback weights)
NORM_EPSILON = 1e-8
DENSITY_EPSILON = 1e-8


class ScheduleStep(NamedTuple):
    iteration: int
    length: int
    next_length: int
    num_reduced: int


@dataclass
class CondensedSequence:
    """Compressed frames plus per-output-frame provenance over the input.

    ``provenance[i]`` is the half-open interval of original frame indices
    fused into output frame ``i``; intervals are strictly increasing.
    ``carried_density`` is the accumulated density mass per output frame
    (``None`` for fusers that do not track density).
    """

    frames: np.ndarray
    provenance: list[tuple[int, int]]
    carried_density: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _as_frames(seq: FrameSequence | np.ndarray) -> np.ndarray:
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if frames.ndim != 2:
        raise ValueError(f"expected a (T, D) matrix, got shape {frames.shape}")
    return frames


def adjacent_similarity(seq: FrameSequence | np.ndarray) -> np.ndarray:
    """Cosine similarity of each adjacent frame pair, shape ``(T - 1,)``.

    Pairs touching a frame of near-zero norm score 0 (neutral) rather than
    producing NaN. Entries are clipped to ``[-1, 1]``.
    """
    frames = np.asarray(_as_frames(seq), dtype=np.float64)
    if frames.shape[0] < 2:
        raise ValueError("adjacent similarity needs at least 2 frames")
    norms = np.sqrt(np.einsum("ij,ij->i", frames, frames))
    dots = np.einsum("ij,ij->i", frames[:-1], frames[1:])
    silent = (norms[:-1] < NORM_EPSILON) | (norms[1:] < NORM_EPSILON)
    denom = np.where(silent, 1.0, norms[:-1] * norms[1:])
    return np.clip(np.where(silent, 0.0, dots / denom), -1.0, 1.0)


def build_schedule(total: int, target: int) -> list[ScheduleStep]:
    """Length schedule from ``total`` down to ``target``.

    Each round halves while the current length exceeds ``2 * target``, then
    jumps straight to ``target``. Empty when ``total <= target``.
    """
    if target < 1:
        raise ValueError("target length must be >= 1")
    if total < 1:
        raise ValueError("total length must be >= 1")
    steps = []
    current = total
    m = 0
    while current > target:
        nxt = current // 2 if current > 2 * target else target
        steps.append(ScheduleStep(m, current, nxt, current - nxt))
        current = nxt
        m += 1
    return steps


def select_pairs(sims: np.ndarray, r: int) -> np.ndarray:
    """Indices of the ``r`` most similar pairs, ascending.

    Ties prefer the smaller index (stable sort on descending similarity).
    """
    sims = np.asarray(sims)
    if r > sims.shape[0]:
        raise ValueError(f"cannot select {r} pairs from {sims.shape[0]}")
    if r == 0:
        return np.empty(0, dtype=np.int64)
    ranked = np.argsort(-sims, kind="stable")
    return np.sort(ranked[:r])


def group_spans(pairs: np.ndarray | Sequence[int], total: int) -> list[tuple[int, int]]:
    """Partition ``[0, total)`` into spans induced by the selected pairs.

    A selected pair ``j`` links frames ``j`` and ``j + 1``; maximal chains of
    links become one span, unlinked frames become singletons.
    """
    link = np.zeros(max(total - 1, 0), dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size:
        if pairs.min() < 0 or pairs.max() > total - 2:
            raise ValueError("pair index out of range")
        link[pairs] = True
    ends = np.append(np.flatnonzero(~link) + 1, total)
    starts = np.concatenate([[0], ends[:-1]])
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def merge_spans(
    seq: FrameSequence | np.ndarray,
    density: np.ndarray,
    spans: Sequence[tuple[int, int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Collapse each span to one frame by density-weighted averaging.

    Weights within a span are ``d_j / sum(d)``; a span whose density mass is
    below ``DENSITY_EPSILON`` falls back to the plain mean. Returns the
    merged frames and the per-span density sums (the carried density).
    """
    frames = np.asarray(_as_frames(seq), dtype=np.float64)
    density = np.asarray(density, dtype=np.float64)
    total = frames.shape[0]
    if density.shape[0] != total:
        raise ValueError("density length must match frame count")
    _check_partition(spans, total)

    starts = np.fromiter((s for s, _ in spans), dtype=np.int64, count=len(spans))
    lengths = np.fromiter((e - s for s, e in spans), dtype=np.int64, count=len(spans))
    mass = np.add.reduceat(density, starts)
    span_of = np.repeat(np.arange(len(spans)), lengths)
    empty = mass[span_of] < DENSITY_EPSILON
    weights = np.where(empty, 1.0 / lengths[span_of], density / np.where(empty, 1.0, mass[span_of]))
    merged = np.add.reduceat(weights[:, None] * frames, starts, axis=0)
    return merged, mass


def _check_partition(spans: Sequence[tuple[int, int]], total: int) -> None:
    cursor = 0
    for s, e in spans:
        if s != cursor or e <= s:
            raise ValueError(f"spans do not partition [0, {total}): bad interval ({s}, {e})")
        cursor = e
    if cursor != total:
        raise ValueError(f"spans cover [0, {cursor}) but the sequence has {total} frames")


def _identity(frames: np.ndarray, density: np.ndarray | None) -> CondensedSequence:
    carried = None if density is None else np.array(density, dtype=np.float64)
    return CondensedSequence(
        frames=np.array(frames),
        provenance=[(j, j + 1) for j in range(frames.shape[0])],
        carried_density=carried,
    )


def iterative_fusion(
    seq: FrameSequence | np.ndarray,
    density: np.ndarray,
    target: int,
    density_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CondensedSequence:
    """Compress to exactly ``target`` frames via the halving schedule.

    Per round, similarity is recomputed on the current (partially merged)
    sequence. Densities are carried forward as per-span sums, or recomputed
    by ``density_fn`` on the merged frames when provided. Input shorter than
    ``target`` is returned unchanged.
    """
    frames = _as_frames(seq)
    density = np.asarray(density, dtype=np.float64)
    if density.shape[0] != frames.shape[0]:
        raise ValueError("density length must match frame count")
    if target < 1:
        raise ValueError("target length must be >= 1")
    if frames.shape[0] <= target:
        return _identity(frames, density)

    work = np.asarray(frames, dtype=np.float64)
    dens = density.copy()
    prov_start = np.arange(frames.shape[0], dtype=np.int64)
    prov_end = prov_start + 1
    for step in build_schedule(frames.shape[0], target):
        sims = adjacent_similarity(work)
        pairs = select_pairs(sims, step.num_reduced)
        spans = group_spans(pairs, work.shape[0])
        work, dens = merge_spans(work, dens, spans)
        if work.shape[0] != step.next_length:
            raise AssertionError("merged length diverged from the schedule")
        starts = np.fromiter((s for s, _ in spans), dtype=np.int64, count=len(spans))
        ends = np.fromiter((e for _, e in spans), dtype=np.int64, count=len(spans))
        prov_start = prov_start[starts]
        prov_end = prov_end[ends - 1]
        if density_fn is not None:
            dens = np.asarray(density_fn(work), dtype=np.float64)
            if dens.shape[0] != work.shape[0]:
                raise ValueError("density_fn must return one density per current frame")
    provenance = [(int(s), int(e)) for s, e in zip(prov_start, prov_end)]
    return CondensedSequence(frames=work, provenance=provenance, carried_density=dens)


def single_shot_fusion(
    seq: FrameSequence | np.ndarray,
    density: np.ndarray,
    target: int,
) -> CondensedSequence:
    """One-pass variant: select all ``T - target`` pairs at once, merge once.

    Ablation arm for the iteration count; shares the selection, grouping,
    and density-weighted merge with :func:`iterative_fusion` but skips the
    halving loop.
    """
    frames = _as_frames(seq)
    density = np.asarray(density, dtype=np.float64)
    if density.shape[0] != frames.shape[0]:
        raise ValueError("density length must match frame count")
    if target < 1:
        raise ValueError("target length must be >= 1")
    total = frames.shape[0]
    if total <= target:
        return _identity(frames, density)
    work = np.asarray(frames, dtype=np.float64)
    sims = adjacent_similarity(work)
    pairs = select_pairs(sims, total - target)
    spans = group_spans(pairs, total)
    merged, mass = merge_spans(work, density, spans)
    return CondensedSequence(frames=merged, provenance=list(spans), carried_density=mass)


def baseline_random(seq: FrameSequence | np.ndarray, target: int, seed: int) -> CondensedSequence:
    """Keep ``target`` uniformly sampled frames, in ascending original order."""
    frames = _as_frames(seq)
    if target < 1:
        raise ValueError("target length must be >= 1")
    total = frames.shape[0]
    if total <= target:
        return _identity(frames, None)
    rng = substream(seed, "random-baseline")
    kept = np.sort(rng.choice(total, size=target, replace=False))
    return CondensedSequence(
        frames=np.array(frames[kept]),
        provenance=[(int(i), int(i) + 1) for i in kept],
        carried_density=None,
    )


def baseline_avgpool(seq: FrameSequence | np.ndarray, target: int) -> CondensedSequence:
    """Mean-pool ``target`` contiguous segments whose lengths differ by at most one.

    The remainder goes to the front, so earlier segments are the longer ones.
    """
    frames = _as_frames(seq)
    if target < 1:
        raise ValueError("target length must be >= 1")
    total = frames.shape[0]
    if total <= target:
        return _identity(frames, None)
    base, rem = divmod(total, target)
    lengths = np.full(target, base, dtype=np.int64)
    lengths[:rem] += 1
    ends = np.cumsum(lengths)
    starts = ends - lengths
    work = np.asarray(frames, dtype=np.float64)
    pooled = np.add.reduceat(work, starts, axis=0) / lengths[:, None]
    provenance = [(int(s), int(e)) for s, e in zip(starts, ends)]
    return CondensedSequence(frames=pooled, provenance=provenance, carried_density=None)


def baseline_mostsim(seq: FrameSequence | np.ndarray, target: int) -> CondensedSequence:
    """Similarity-only fuser: the iterative procedure with no density signal.

    Implemented as iterative fusion under all-ones densities, which makes
    every span merge the plain average of the original frames it covers.
    """
    frames = _as_frames(seq)
    return iterative_fusion(frames, np.ones(frames.shape[0]), target)


def write_condensed(cseq: CondensedSequence, path: str | Path) -> None:
    """Write frames as FSQ1 plus a ``<path>.json`` sidecar with provenance."""
    path = Path(path)
    write_fseq(FrameSequence(frames=cseq.frames.astype(np.float32), id=path.stem), path)
    sidecar = {
        "provenance": [list(p) for p in cseq.provenance],
        "carried_density": None
        if cseq.carried_density is None
        else [float(x) for x in cseq.carried_density],
    }
    with open(path.with_name(path.name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def read_condensed(path: str | Path) -> CondensedSequence:
    path = Path(path)
    seq = read_fseq(path)
    with open(path.with_name(path.name + ".json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    carried = sidecar.get("carried_density")
    return CondensedSequence(
        frames=seq.frames,
        provenance=[tuple(p) for p in sidecar["provenance"]],
        carried_density=None if carried is None else np.asarray(carried, dtype=np.float64),
    )
