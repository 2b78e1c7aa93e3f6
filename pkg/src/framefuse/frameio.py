"""Frame-sequence data model, binary file formats, and the synthetic dataset generator.

A dataset on disk is:

* one ``.fsq`` file per sequence (FSQ1 binary, see :func:`write_fseq`),
* one ``.labels.json`` file per sequence (a single JSON object holding the
  token list plus the generator's emission trace),
* a ``manifest.jsonl`` tying them together (header line with ``vocab_size``
  and ``seed``, then one entry object per line),
* a ``vocab.json`` mapping token id to a display string.

Token id 0 is reserved everywhere for the blank symbol; vocab files list
ids ``1..V`` only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import substream

__all__ = [
    "FrameSequence",
    "ManifestEntry",
    "DatasetManifest",
    "SyntheticSpec",
    "SyntheticSequence",
    "FormatError",
    "write_fseq",
    "read_fseq",
    "anchor_embeddings",
    "generate_synthetic",
    "write_dataset",
    "load_manifest",
    "save_manifest",
    "read_labels",
    "write_labels",
    "load_dataset",
]

FSEQ_MAGIC = b"FSQ1"


class FormatError(ValueError):
    """Raised when a file does not parse as the expected binary format."""


@dataclass
class FrameSequence:
    """A ``T x D`` matrix of frame embeddings plus frame-rate metadata.

    ``frames`` is stored as float32 (the on-disk unit). ``frame_rate_hz``
    and ``id`` are carried alongside in memory; the FSQ1 payload holds only
    the matrix, so readers restore the default rate and derive ``id`` from
    the filename.
    """

    frames: np.ndarray
    frame_rate_hz: float = 25.0
    id: str = ""

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be at least 1x1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain NaN or Inf")
        if self.frame_rate_hz <= 0:
            raise ValueError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class ManifestEntry:
    sequence_path: str
    label_path: str
    duration_frames: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    vocab_size: int
    seed: int
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.root = Path(self.root)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SyntheticSpec:
    """Configuration of the seeded ASR-proxy generator.

    Each token id has a fixed anchor embedding; a token emits a run of
    ``k ~ Uniform[frames_per_token]`` noisy copies of its anchor, and gaps
    between tokens receive 1-3 near-silent frames with probability
    ``silence_prob``.
    """

    vocab_size: int
    embed_dim: int
    frames_per_token: tuple[int, int] = (1, 3)
    noise_stddev: float = 0.0
    silence_prob: float = 0.0
    num_sequences: int = 1
    tokens_per_sequence: tuple[int, int] = (4, 8)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        k_min, k_max = self.frames_per_token
        if k_min < 1 or k_max < k_min:
            raise ValueError(f"invalid frames_per_token range {self.frames_per_token}")
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be >= 0")
        if not 0.0 <= self.silence_prob < 1.0:
            raise ValueError("silence_prob must be in [0, 1)")
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be >= 1")
        t_min, t_max = self.tokens_per_sequence
        if t_min < 0 or t_max < t_min:
            raise ValueError(f"invalid tokens_per_sequence range {self.tokens_per_sequence}")


@dataclass
class SyntheticSequence:
    """One generated sequence with its label and emission trace.

    ``emissions[i]`` is the number of frames emitted for ``tokens[i]``;
    ``silences`` records ``(gap_index, num_frames)`` for every inserted
    silence run. Frame counts therefore satisfy
    ``T == sum(emissions) + sum(n for _, n in silences)``.
    """

    sequence: FrameSequence
    tokens: list[int]
    emissions: list[int]
    silences: list[tuple[int, int]]


def write_fseq(seq: FrameSequence, path: str | Path) -> None:
    """Write ``seq.frames`` in the FSQ1 binary layout.

    Layout: magic ``"FSQ1"``, then T and D as unsigned 32-bit little-endian,
    then ``T*D`` float32 little-endian values in row-major order. Validation
    happens before the file is opened, so invalid input writes no bytes.
    """
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    if not np.all(np.isfinite(frames)):
        raise ValueError("refusing to write non-finite frames")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(FSEQ_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(frames.tobytes(order="C"))


def read_fseq(path: str | Path) -> FrameSequence:
    """Read an FSQ1 file; inverse of :func:`write_fseq` on the payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FSEQ_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FSEQ_MAGIC!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated header")
        t, d = struct.unpack("<II", header)
        expected = t * d * 4
        payload = fh.read(expected)
        if len(payload) != expected:
            raise FormatError(
                f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
            )
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return FrameSequence(frames=frames.copy(), id=path.stem)


def anchor_embeddings(spec: SyntheticSpec) -> np.ndarray:
    """Anchor embedding per token id, shape ``(V + 1, D)``.

    Row 0 (blank) is all zeros; rows ``1..V`` are unit-Gaussian draws,
    L2-normalized so that same-token frames are highly cosine-similar by
    construction. Deterministic given ``spec.seed``.
    """
    rng = substream(spec.seed, "anchors")
    anchors = rng.standard_normal((spec.vocab_size, spec.embed_dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    return np.vstack([np.zeros((1, spec.embed_dim)), anchors]).astype(np.float32)


def generate_synthetic(spec: SyntheticSpec) -> list[SyntheticSequence]:
    """Generate ``spec.num_sequences`` sequences, fully deterministic given the seed.

    A sequence with an empty token list and no inserted silence would have
    zero frames; one silent frame is emitted instead so every sequence
    satisfies ``T >= 1``.
    """
    anchors = anchor_embeddings(spec)
    rng = substream(spec.seed, "generator")
    k_min, k_max = spec.frames_per_token
    t_min, t_max = spec.tokens_per_sequence
    silence_std = spec.noise_stddev / 10.0

    out = []
    for i in range(spec.num_sequences):
        n_tokens = int(rng.integers(t_min, t_max + 1))
        tokens = [int(v) for v in rng.integers(1, spec.vocab_size + 1, size=n_tokens)]
        frames: list[np.ndarray] = []
        emissions: list[int] = []
        silences: list[tuple[int, int]] = []
        for gap, tok in enumerate(tokens):
            if gap > 0 and rng.random() < spec.silence_prob:
                n_sil = int(rng.integers(1, 4))
                frames.append(_noise(rng, (n_sil, spec.embed_dim), silence_std))
                silences.append((gap, n_sil))
            k = int(rng.integers(k_min, k_max + 1))
            emissions.append(k)
            frames.append(anchors[tok] + _noise(rng, (k, spec.embed_dim), spec.noise_stddev))
        if not frames:
            frames.append(_noise(rng, (1, spec.embed_dim), silence_std))
            silences.append((0, 1))
        matrix = np.concatenate(frames, axis=0).astype(np.float32)
        seq = FrameSequence(frames=matrix, id=f"seq{i:05d}")
        out.append(SyntheticSequence(seq, tokens, emissions, silences))
    return out


def _noise(rng: np.random.Generator, shape: tuple[int, int], stddev: float) -> np.ndarray:
    if stddev == 0.0:
        return np.zeros(shape, dtype=np.float64)
    return rng.normal(0.0, stddev, size=shape)


def write_labels(path: str | Path, sample: SyntheticSequence) -> None:
    record = {
        "tokens": sample.tokens,
        "emissions": sample.emissions,
        "silences": [list(s) for s in sample.silences],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def read_labels(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.readline())


def write_dataset(samples: Sequence[SyntheticSequence], spec: SyntheticSpec, out_dir: str | Path) -> DatasetManifest:
    """Write sequences, labels, vocab, and manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in samples:
        fsq_name = f"{sample.sequence.id}.fsq"
        lab_name = f"{sample.sequence.id}.labels.json"
        write_fseq(sample.sequence, out_dir / fsq_name)
        write_labels(out_dir / lab_name, sample)
        entries.append(ManifestEntry(fsq_name, lab_name, sample.sequence.num_frames))
    manifest = DatasetManifest(entries, spec.vocab_size, spec.seed, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    vocab = {str(v): f"tok{v}" for v in range(1, spec.vocab_size + 1)}
    with open(out_dir / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(vocab, fh, indent=0, sort_keys=True)
        fh.write("\n")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"vocab_size": manifest.vocab_size, "seed": manifest.seed}) + "\n")
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {
                        "sequence": e.sequence_path,
                        "labels": e.label_path,
                        "duration_frames": e.duration_frames,
                    }
                )
                + "\n"
            )


def load_manifest(path: str | Path, validate: bool = True) -> DatasetManifest:
    """Load a manifest; with ``validate`` every referenced file must exist."""
    path = Path(path)
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "vocab_size" not in lines[0]:
        raise FormatError(f"{path}: missing manifest header line")
    header, rows = lines[0], lines[1:]
    entries = [ManifestEntry(r["sequence"], r["labels"], int(r["duration_frames"])) for r in rows]
    manifest = DatasetManifest(entries, int(header["vocab_size"]), int(header["seed"]), root=root)
    if validate:
        for e in entries:
            for name in (e.sequence_path, e.label_path):
                if not (root / name).exists():
                    raise FormatError(f"{path}: referenced file {name} does not exist")
    return manifest


def load_dataset(manifest: DatasetManifest) -> list[tuple[FrameSequence, list[int]]]:
    """Materialize ``(sequence, tokens)`` pairs for every manifest entry."""
    pairs = []
    for e in manifest.entries:
        seq = read_fseq(manifest.root / e.sequence_path)
        tokens = [int(t) for t in read_labels(manifest.root / e.label_path)["tokens"]]
        pairs.append((seq, tokens))
    return pairs
