"""Long-input handling: chunked encoding, window compression, length sampling.

Inputs longer than the downstream model's frame window are first encoded
chunk by chunk (a stand-in hook for a real encoder), concatenated in
temporal order, and then fused down to the window size. Training-time
compression draws a per-sequence target length uniformly from a fixed
candidate set; the draw plan is serialized so independent runs consume
identical plans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .frameio import DatasetManifest, FrameSequence
from .fusion import CondensedSequence, iterative_fusion
from .seeding import substream

__all__ = [
    "DEFAULT_TARGET_LENGTHS",
    "WindowConfig",
    "PlanEntry",
    "identity_hook",
    "make_projection_hook",
    "chunk_and_encode",
    "compress_to_window",
    "sample_target_length",
    "dct_batch_plan",
    "save_plan",
    "load_plan",
    "load_window_config",
]

# 750 frames = 30 s at the 25 Hz frame rate
DEFAULT_WINDOW_FRAMES = 750
DEFAULT_CHUNK_FRAMES = 750
DEFAULT_TARGET_LENGTHS = (750, 400, 200, 100, 50, 25, 12)

EncoderHook = Callable[[np.ndarray], np.ndarray]


@dataclass
class WindowConfig:
    window_frames: int = DEFAULT_WINDOW_FRAMES
    chunk_frames: int = DEFAULT_CHUNK_FRAMES
    target_lengths: tuple[int, ...] = DEFAULT_TARGET_LENGTHS

    def __post_init__(self) -> None:
        self.target_lengths = tuple(int(x) for x in self.target_lengths)
        if not self.target_lengths:
            raise ValueError("target_lengths must be nonempty")
        if any(x < 1 for x in self.target_lengths):
            raise ValueError("every candidate target length must be >= 1")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if self.window_frames < max(self.target_lengths):
            raise ValueError("window_frames must be >= max(target_lengths)")


def identity_hook(chunk: np.ndarray) -> np.ndarray:
    return chunk


def make_projection_hook(in_dim: int, out_dim: int | None = None, seed: int = 0) -> EncoderHook:
    """Seeded linear projection applied per chunk (a deterministic encoder stand-in)."""
    out_dim = in_dim if out_dim is None else out_dim
    rng = substream(seed, "projection-hook")
    matrix = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)

    def hook(chunk: np.ndarray) -> np.ndarray:
        return np.asarray(chunk, dtype=np.float64) @ matrix

    return hook


def chunk_and_encode(
    seq: FrameSequence, cfg: WindowConfig, hook: EncoderHook = identity_hook
) -> FrameSequence:
    """Encode ``seq`` in chunks of ``cfg.chunk_frames`` and re-concatenate.

    The last chunk may be shorter and is processed as-is. A hook must keep
    the frame count of each chunk and produce a constant output dimension.
    """
    frames = seq.frames
    total = frames.shape[0]
    pieces = []
    out_dim = None
    for start in range(0, total, cfg.chunk_frames):
        chunk = frames[start : start + cfg.chunk_frames]
        encoded = np.asarray(hook(chunk))
        if encoded.ndim != 2 or encoded.shape[0] != chunk.shape[0]:
            raise ValueError(
                f"encoder hook changed chunk length {chunk.shape[0]} -> {encoded.shape}"
            )
        if out_dim is None:
            out_dim = encoded.shape[1]
        elif encoded.shape[1] != out_dim:
            raise ValueError("encoder hook produced inconsistent output dimensions")
        pieces.append(encoded)
    combined = np.concatenate(pieces, axis=0).astype(np.float32)
    return FrameSequence(frames=combined, frame_rate_hz=seq.frame_rate_hz, id=seq.id)


def compress_to_window(
    seq: FrameSequence | np.ndarray, density: np.ndarray, cfg: WindowConfig
) -> CondensedSequence:
    """Fuse down to the frame window; never returns more than ``window_frames``."""
    return iterative_fusion(seq, density, cfg.window_frames)


def sample_target_length(cfg: WindowConfig, rng: np.random.Generator) -> int:
    """One uniform draw from the candidate target lengths."""
    return int(cfg.target_lengths[rng.integers(0, len(cfg.target_lengths))])


@dataclass
class PlanEntry:
    sequence_id: str
    target_length: int
    epoch: int
    seed: int


def dct_batch_plan(
    manifest: DatasetManifest | Sequence[str],
    cfg: WindowConfig,
    seed: int,
    epochs: int = 1,
) -> list[PlanEntry]:
    """Assign one sampled target length per sequence per epoch.

    Accepts a manifest (ids derived from sequence filenames) or a plain list
    of ids. Reproducible: the draw stream depends only on ``seed``.
    """
    if isinstance(manifest, DatasetManifest):
        ids = [Path(e.sequence_path).stem for e in manifest.entries]
    else:
        ids = list(manifest)
    if not ids:
        raise ValueError("cannot plan over an empty manifest")
    rng = substream(seed, "length-sampler")
    plan = []
    for epoch in range(epochs):
        for sid in ids:
            plan.append(PlanEntry(sid, sample_target_length(cfg, rng), epoch, seed))
    return plan


def save_plan(plan: Sequence[PlanEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in plan:
            fh.write(
                json.dumps(
                    {"id": e.sequence_id, "L": e.target_length, "epoch": e.epoch, "seed": e.seed}
                )
                + "\n"
            )


def load_plan(path: str | Path) -> list[PlanEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(PlanEntry(r["id"], int(r["L"]), int(r["epoch"]), int(r["seed"])))
    return out


def load_window_config(path: str | Path, overrides: dict | None = None) -> WindowConfig:
    """Build a WindowConfig merging defaults < file values < overrides."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        values.update(json.load(fh))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    allowed = {"window_frames", "chunk_frames", "target_lengths"}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown window config keys: {sorted(unknown)}")
    return WindowConfig(**values)
