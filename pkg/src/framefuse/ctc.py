"""CTC objective, decoding, content density, and a shallow trainable decoder head.

The frame-labelling convention throughout: class 0 is the blank symbol,
classes ``1..V`` are real tokens. A posterior grid is a ``T x (V + 1)``
matrix of per-frame log-probabilities (each row a distribution).

The loss path (:func:`ctc_log_loss`, :func:`ctc_grad`) uses the standard
forward/backward dynamic program over the blank-interleaved extended label,
entirely in log space. :func:`enumerate_alignments_oracle` is a brute-force
cross-check that shares no code with the dynamic program.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .frameio import DatasetManifest, FrameSequence, FormatError, load_dataset
from .seeding import substream

__all__ = [
    "CtcDecoder",
    "TrainingConfig",
    "TrainingDivergedError",
    "FULL_SCALE_PRESET",
    "init_decoder",
    "save_decoder",
    "load_decoder",
    "decoder_forward",
    "validate_grid",
    "ctc_log_loss",
    "ctc_grad",
    "enumerate_alignments_oracle",
    "greedy_decode",
    "collapse_path",
    "content_density",
    "train_ctc_decoder",
]

DECODER_MAGIC = b"CTD1"

# Production-scale configuration for reference; the library defaults are
# deliberately desk-scale (hidden_dim=64, small vocabularies).
FULL_SCALE_PRESET = {
    "hidden_dim": 4096,
    "vocab_size": 10000,
    "learning_rate": 2e-5,
    "lr_schedule": "cosine",
}


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class CtcDecoder:
    """One-hidden-layer feed-forward network mapping frames to class logits.

    ``w1: (D, H)``, ``b1: (H,)``, ``w2: (H, V + 1)``, ``b2: (V + 1,)``.
    Hidden nonlinearity is ReLU. Output class 0 is blank.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"decoder parameter {name} contains non-finite values")
            setattr(self, name, arr)
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[0] != self.b1.shape[0]:
            raise ValueError("inconsistent hidden dimension")
        if self.w2.shape[1] != self.b2.shape[0]:
            raise ValueError("inconsistent output dimension")
        if self.w2.shape[1] < 2:
            raise ValueError("output dimension must cover blank plus at least one token")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.w2.shape[1] - 1


def init_decoder(input_dim: int, hidden_dim: int, vocab_size: int, seed: int = 0) -> CtcDecoder:
    """He-initialized decoder; deterministic given the seed."""
    rng = substream(seed, "init")
    w1 = rng.standard_normal((input_dim, hidden_dim)) * math.sqrt(2.0 / input_dim)
    w2 = rng.standard_normal((hidden_dim, vocab_size + 1)) * math.sqrt(1.0 / hidden_dim)
    return CtcDecoder(w1, np.zeros(hidden_dim), w2, np.zeros(vocab_size + 1))


def save_decoder(dec: CtcDecoder, path: str | Path) -> None:
    """Checkpoint layout: ``"CTD1"``, D/H/V as u32 LE, then w1, b1, w2, b2 as f32 LE."""
    with open(path, "wb") as fh:
        fh.write(DECODER_MAGIC)
        fh.write(struct.pack("<III", dec.input_dim, dec.hidden_dim, dec.vocab_size))
        for arr in (dec.w1, dec.b1, dec.w2, dec.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_decoder(path: str | Path) -> CtcDecoder:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != DECODER_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic")
        d, h, v = struct.unpack("<III", fh.read(12))
        shapes = [(d, h), (h,), (h, v + 1), (v + 1,)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise FormatError(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64))
    return CtcDecoder(*arrays)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_parts(dec: CtcDecoder, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = frames @ dec.w1 + dec.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ dec.w2 + dec.b2
    return pre, hidden, logits


def decoder_forward(dec: CtcDecoder, seq: FrameSequence | np.ndarray) -> np.ndarray:
    """Per-frame class log-probabilities, shape ``(T, V + 1)``.

    Rows are independent: frame ``j``'s row is the log-softmax of the
    network applied to frame ``j`` alone.
    """
    frames = np.asarray(seq.frames if isinstance(seq, FrameSequence) else seq, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != dec.input_dim:
        raise ValueError(
            f"frame dimension {frames.shape} does not match decoder input dim {dec.input_dim}"
        )
    _, _, logits = _forward_parts(dec, frames)
    return _log_softmax(logits)


def validate_grid(grid: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    """Check posterior-grid invariants: entries <= 0, rows sum to 1."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 2:
        raise ValueError(f"grid must be (T, V+1) with V >= 1, got {grid.shape}")
    if np.any(grid > 1e-12):
        raise ValueError("grid holds log-probabilities; entries must be <= 0")
    sums = np.exp(grid).sum(axis=1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError("grid rows must each sum to 1 in probability space")
    return grid


def _extended_label(label: Sequence[int], vocab_size: int) -> np.ndarray:
    label = np.asarray(label, dtype=np.int64)
    if label.size and (label.min() < 1 or label.max() > vocab_size):
        raise ValueError(f"label tokens must lie in [1, {vocab_size}]")
    ext = np.zeros(2 * label.size + 1, dtype=np.int64)
    ext[1::2] = label
    return ext


def _check_feasible(num_frames: int, label: Sequence[int]) -> None:
    # an alignment exists iff there is room for every token plus a blank
    # between each adjacent repeat
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    needed = len(label) + repeats
    if num_frames < needed:
        raise ValueError(
            f"label of length {len(label)} with {repeats} repeats needs at least "
            f"{needed} frames, got {num_frames}"
        )


def _check_trainable(num_frames: int, label_len: int) -> None:
    # conservative dataset guard: full blank-interleaved extended label fits
    if 2 * label_len + 1 > num_frames:
        raise ValueError(
            f"label of length {label_len} needs at least {2 * label_len + 1} frames "
            f"for training, got {num_frames}"
        )


def _forward_table(grid: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """All-timestep forward table ``alpha``, shape ``(T, S)``.

    ``alpha[t, s]`` is the log-probability mass of all valid extended-label
    prefixes ending in state ``s`` at frame ``t``, emissions up to and
    including ``t``.
    """
    t_total, s_total = grid.shape[0], ext.shape[0]
    em = grid[:, ext]
    # skip transition s-2 -> s allowed only into a token state differing from
    # the token two slots back
    skip_ok = np.zeros(s_total, dtype=bool)
    if s_total > 2:
        skip_ok[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    skip_idx = np.flatnonzero(skip_ok)

    alpha = np.full((t_total, s_total), -np.inf)
    alpha[0, 0] = em[0, 0]
    if s_total > 1:
        alpha[0, 1] = em[0, 1]
    for t in range(1, t_total):
        prev = alpha[t - 1]
        cur = alpha[t]
        cur[0] = prev[0]
        np.logaddexp(prev[1:], prev[:-1], out=cur[1:])
        if skip_idx.size:
            cur[skip_idx] = np.logaddexp(cur[skip_idx], prev[skip_idx - 2])
        cur += em[t]
    return alpha


def ctc_log_loss(grid: np.ndarray, label: Sequence[int]) -> float:
    """Log-probability of all alignments collapsing to ``label``.

    Returns ``log sum_{a in Gamma(label)} prod_j p(a_j | h_j)``; the CTC loss
    is the negation. Rejects labels no alignment can produce (more tokens
    plus repeat-separating blanks than frames) and tokens outside ``[1, V]``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    label = list(label)
    _check_feasible(grid.shape[0], label)
    ext = _extended_label(label, grid.shape[1] - 1)
    alpha = _forward_table(grid, ext)
    last = alpha[-1]
    if ext.shape[0] == 1:
        return float(last[0])
    return float(np.logaddexp(last[-1], last[-2]))


def _backward_table(grid: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Suffix analogue of :func:`_forward_table`; emissions from ``t`` inclusive."""
    t_total, s_total = grid.shape[0], ext.shape[0]
    em = grid[:, ext]
    skip_ok = np.zeros(s_total, dtype=bool)
    if s_total > 2:
        skip_ok[:-2] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    skip_idx = np.flatnonzero(skip_ok)

    beta = np.full((t_total, s_total), -np.inf)
    beta[-1, -1] = em[-1, -1]
    if s_total > 1:
        beta[-1, -2] = em[-1, -2]
    for t in range(t_total - 2, -1, -1):
        nxt = beta[t + 1]
        cur = beta[t]
        cur[-1] = nxt[-1]
        np.logaddexp(nxt[:-1], nxt[1:], out=cur[:-1])
        if skip_idx.size:
            cur[skip_idx] = np.logaddexp(cur[skip_idx], nxt[skip_idx + 2])
        cur += em[t]
    return beta


def ctc_grad(grid: np.ndarray, label: Sequence[int]) -> np.ndarray:
    """Gradient of the CTC loss with respect to pre-softmax logits.

    For logits ``u`` with ``grid = log_softmax(u)``, returns
    ``d(-log P(label)) / du``: the per-frame class posterior minus the
    alignment-state posterior aggregated per class. Each row sums to zero
    (softmax shift invariance).
    """
    grid = np.asarray(grid, dtype=np.float64)
    label = list(label)
    _check_feasible(grid.shape[0], label)
    ext = _extended_label(label, grid.shape[1] - 1)
    em = grid[:, ext]
    alpha = _forward_table(grid, ext)
    beta = _backward_table(grid, ext)
    if ext.shape[0] == 1:
        log_total = alpha[-1, 0]
    else:
        log_total = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if np.isneginf(log_total):
        raise FloatingPointError("alignment probability underflowed to zero")

    # alpha and beta both include the emission at t, so divide it out once
    ab = alpha + beta
    with np.errstate(invalid="ignore"):
        log_occ = ab - em - log_total
    log_occ = np.where(np.isneginf(ab), -np.inf, log_occ)

    occupancy = np.zeros_like(grid)
    rows = np.arange(grid.shape[0])[:, None]
    np.add.at(occupancy, (rows, ext[None, :]), np.exp(log_occ))
    return np.exp(grid) - occupancy


def enumerate_alignments_oracle(grid: np.ndarray, label: Sequence[int]) -> float:
    """Brute-force total alignment probability, for cross-checking the DP.

    Enumerates every path in ``[0, V]^T``, collapses it (merge adjacent
    repeats, drop blanks), and log-sums the probabilities of paths equal to
    ``label``. Returns ``-inf`` when no path matches. Guarded to
    ``(V + 1) ** T <= 1e7`` paths. Intentionally shares no code with
    :func:`ctc_log_loss`.
    """
    grid = np.asarray(grid, dtype=np.float64)
    t_total, classes = grid.shape
    if classes**t_total > 10**7:
        raise ValueError(f"enumeration of {classes}**{t_total} paths exceeds the 1e7 guard")
    target = tuple(int(x) for x in label)

    n_paths = classes**t_total
    idx = np.arange(n_paths)
    logp = np.zeros(n_paths)
    for t in range(t_total):
        digits = (idx // classes ** (t_total - 1 - t)) % classes
        logp += grid[t, digits]

    matched = []
    for path, lp in zip(itertools.product(range(classes), repeat=t_total), logp.tolist()):
        collapsed = []
        prev = -1
        for a in path:
            if a != prev:
                if a != 0:
                    collapsed.append(a)
                prev = a
        if tuple(collapsed) == target:
            matched.append(lp)
    if not matched:
        return float("-inf")
    return float(np.logaddexp.reduce(np.array(matched)))


def collapse_path(path: Sequence[int]) -> list[int]:
    """Merge adjacent repeats, then drop blanks (the collapse function)."""
    out: list[int] = []
    prev = -1
    for a in path:
        a = int(a)
        if a != prev and a != 0:
            out.append(a)
        prev = a
    return out


def greedy_decode(grid: np.ndarray) -> list[int]:
    """Best-path decode: per-frame argmax, then collapse."""
    grid = np.asarray(grid)
    return collapse_path(np.argmax(grid, axis=1))


def content_density(grid: np.ndarray) -> np.ndarray:
    """Per-frame probability of carrying non-blank content: ``1 - p(blank)``.

    Exactly zero for a blank-certain row; always within ``[0, 1]``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    return np.clip(1.0 - np.exp(grid[:, 0]), 0.0, 1.0)


@dataclass
class TrainingConfig:
    """Desk-scale defaults; see ``FULL_SCALE_PRESET`` for the production scale."""

    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 3e-3
    hidden_dim: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = "cosine"  # "cosine" or "constant"

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        if self.lr_schedule == "cosine":
            return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / max(1, self.steps)))
        raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


def train_ctc_decoder(
    data: DatasetManifest | Sequence[tuple[FrameSequence, Sequence[int]]],
    cfg: TrainingConfig,
    vocab_size: int | None = None,
) -> tuple[CtcDecoder, list[dict]]:
    """Train a decoder head by Adam on the mean per-sequence CTC loss.

    ``data`` is a manifest (loaded from disk) or in-memory
    ``(sequence, tokens)`` pairs, in which case ``vocab_size`` must be given.
    Batches group sequences of similar length; the gradient is the mean of
    per-sequence logit gradients, reduced in a fixed order so results are
    bit-reproducible for a given seed. Returns the decoder and a history of
    ``{"step", "loss", "lr"}`` records.
    """
    if isinstance(data, DatasetManifest):
        vocab_size = data.vocab_size
        pairs = load_dataset(data)
    else:
        if vocab_size is None:
            raise ValueError("vocab_size is required for in-memory data")
        pairs = [(seq, list(tokens)) for seq, tokens in data]
    if not pairs:
        raise ValueError("empty training set")
    for seq, tokens in pairs:
        _check_trainable(seq.num_frames, len(tokens))

    dim = pairs[0][0].dim
    dec = init_decoder(dim, cfg.hidden_dim, vocab_size, seed=cfg.seed)
    params = [dec.w1, dec.b1, dec.w2, dec.b2]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]

    # similar-length batching: sort once, shuffle batch order per epoch
    order = sorted(range(len(pairs)), key=lambda i: (pairs[i][0].num_frames, i))
    batches = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
    shuffle_rng = substream(cfg.seed, "batches")
    frames_f64 = {i: np.asarray(pairs[i][0].frames, dtype=np.float64) for i in range(len(pairs))}

    history: list[dict] = []
    step = 0
    while step < cfg.steps:
        epoch_order = shuffle_rng.permutation(len(batches))
        for b in epoch_order:
            if step >= cfg.steps:
                break
            batch = batches[b]
            stacked = np.concatenate([frames_f64[i] for i in batch], axis=0)
            pre, hidden, logits = _forward_parts(dec, stacked)
            grids = _log_softmax(logits)

            d_logits = np.empty_like(logits)
            losses = []
            offset = 0
            for i in batch:
                t_i = pairs[i][0].num_frames
                grid_i = grids[offset : offset + t_i]
                losses.append(-ctc_log_loss(grid_i, pairs[i][1]))
                d_logits[offset : offset + t_i] = ctc_grad(grid_i, pairs[i][1])
                offset += t_i
            loss = float(np.mean(losses))
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite at step {step}")
            d_logits /= len(batch)

            d_w2 = hidden.T @ d_logits
            d_b2 = d_logits.sum(axis=0)
            d_hidden = d_logits @ dec.w2.T
            d_hidden[pre <= 0.0] = 0.0
            d_w1 = stacked.T @ d_hidden
            d_b1 = d_hidden.sum(axis=0)

            lr = cfg.lr_at(step)
            step += 1
            for p, g, m_p, v_p in zip(params, [d_w1, d_b1, d_w2, d_b2], m, v):
                m_p *= cfg.beta1
                m_p += (1 - cfg.beta1) * g
                v_p *= cfg.beta2
                v_p += (1 - cfg.beta2) * g * g
                m_hat = m_p / (1 - cfg.beta1**step)
                v_hat = v_p / (1 - cfg.beta2**step)
                p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            history.append({"step": step, "loss": loss, "lr": lr})
    return dec, history
