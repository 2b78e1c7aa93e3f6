"""Decode-retention benchmark: error rates, fuser grid, cost model, reports.

The central measurement is retention: compress a sequence to a target
length, greedy-decode the condensed frames with the same decoder used for
the original, and score the token error rate against the reference labels.
A grid run sweeps fusers against target lengths over a dataset and emits
deterministic, re-runnable reports.
"""

from __future__ import annotations

import csv
import json
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ctc import CtcDecoder, content_density, decoder_forward, greedy_decode
from .frameio import DatasetManifest, FrameSequence, load_dataset
from .fusion import (
    CondensedSequence,
    baseline_avgpool,
    baseline_mostsim,
    baseline_random,
    iterative_fusion,
    single_shot_fusion,
)

__all__ = [
    "CostModel",
    "DEFAULT_COST_MODEL",
    "FULL_SCALE_TFLOPS",
    "BenchReport",
    "FUSER_NAMES",
    "edit_distance",
    "token_error_rate",
    "make_fuser",
    "retention_cer",
    "estimate_cost",
    "run_grid",
    "resolve_target",
    "write_report",
]

# Published full-scale TFLOPs at window/target lengths 750/400/200/100,
# printed in reports for orientation only; this benchmark's cost model is a
# proxy and does not reproduce them.
FULL_SCALE_TFLOPS = {750: 9.79, 400: 8.54, 200: 5.64, 100: 4.17}

FUSER_NAMES = ("density", "single-shot", "mostsim", "avgpool", "random")


@dataclass
class CostModel:
    """Inference-cost proxy: ``fixed + linear * T + quadratic * T**2``."""

    coeff_linear: float = 0.013
    coeff_quadratic: float = 1e-7
    fixed_overhead: float = 0.05

    def __post_init__(self) -> None:
        if min(self.coeff_linear, self.coeff_quadratic, self.fixed_overhead) < 0:
            raise ValueError("cost coefficients must be >= 0")
        if self.coeff_linear == self.coeff_quadratic == self.fixed_overhead == 0:
            raise ValueError("at least one cost coefficient must be positive")


DEFAULT_COST_MODEL = CostModel()


def estimate_cost(num_frames: int, model: CostModel = DEFAULT_COST_MODEL) -> float:
    if num_frames < 0:
        raise ValueError("frame count must be >= 0")
    return (
        model.fixed_overhead
        + model.coeff_linear * num_frames
        + model.coeff_quadratic * num_frames * num_frames
    )


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y))
            )
        previous = current
    return previous[-1]


def token_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Edit distance normalized by reference length (>= 0, may exceed 1)."""
    return edit_distance(hyp, ref) / max(1, len(ref))


def _random_seed_for(base_seed: int, sequence_id: str) -> int:
    return zlib.crc32(f"{base_seed}:{sequence_id}".encode("utf-8"))


def make_fuser(
    name: str, seed: int = 0
) -> Callable[[FrameSequence, np.ndarray, int], CondensedSequence]:
    """Adapter giving every fuser the signature ``(seq, density, target)``.

    The random baseline derives its stream from ``seed`` and the sequence id
    so results do not depend on evaluation order.
    """
    if name == "density":
        return lambda seq, density, target: iterative_fusion(seq, density, target)
    if name == "single-shot":
        return lambda seq, density, target: single_shot_fusion(seq, density, target)
    if name == "mostsim":
        return lambda seq, density, target: baseline_mostsim(seq, target)
    if name == "avgpool":
        return lambda seq, density, target: baseline_avgpool(seq, target)
    if name == "random":

        def random_fuser(seq, density, target):
            sid = seq.id if isinstance(seq, FrameSequence) else ""
            return baseline_random(seq, target, seed=_random_seed_for(seed, sid))

        return random_fuser
    raise ValueError(f"unknown fuser {name!r}; expected one of {FUSER_NAMES}")


def retention_cer(
    decoder: CtcDecoder,
    seq: FrameSequence,
    label: Sequence[int],
    fuser: Callable[[FrameSequence, np.ndarray, int], CondensedSequence],
    target: int,
) -> float:
    """Token error rate of decoding the condensed sequence.

    At ``target >= T`` every fuser is the identity, so this equals the
    uncompressed decode's error rate exactly.
    """
    density = content_density(decoder_forward(decoder, seq))
    condensed = fuser(seq, density, target)
    decoded = greedy_decode(decoder_forward(decoder, condensed.frames))
    return token_error_rate(decoded, label)


def resolve_target(spec: int | str, num_frames: int) -> int:
    """Resolve a grid target: an absolute count, ``"T"``, or ``"T/k"``."""
    if isinstance(spec, int):
        if spec < 1:
            raise ValueError("absolute target must be >= 1")
        return spec
    text = spec.strip()
    if text == "T":
        return num_frames
    if text.startswith("T/"):
        k = int(text[2:])
        if k < 1:
            raise ValueError(f"bad target spec {spec!r}")
        return max(1, num_frames // k)
    return int(text)


@dataclass
class BenchReport:
    rows: list[dict]
    traces: list[dict]
    reference_note: dict

    def row(self, fuser: str, target: int | str) -> dict:
        key = str(target)
        for r in self.rows:
            if r["fuser"] == fuser and str(r["target"]) == key:
                return r
        raise KeyError(f"no row for ({fuser}, {target})")


def run_grid(
    data: DatasetManifest | Sequence[tuple[FrameSequence, Sequence[int]]],
    decoder: CtcDecoder,
    fusers: Sequence[str] = FUSER_NAMES,
    targets: Sequence[int | str] = ("T", "T/2", "T/4", "T/8"),
    cost_model: CostModel = DEFAULT_COST_MODEL,
    seed: int = 0,
    threads: int = 1,
    flush_path: str | Path | None = None,
) -> BenchReport:
    """Evaluate every (fuser, target) cell over the dataset.

    Deterministic given ``seed`` regardless of ``threads``: cells run in a
    fixed order and per-sequence results are collected by index. When
    ``flush_path`` is set, rows are appended there as they complete and a
    failure marker line is written if evaluation aborts.
    """
    pairs = load_dataset(data) if isinstance(data, DatasetManifest) else list(data)
    if not pairs:
        raise ValueError("empty benchmark dataset")
    densities = [content_density(decoder_forward(decoder, seq)) for seq, _ in pairs]

    rows: list[dict] = []
    traces: list[dict] = []
    flush_fh = open(flush_path, "w", encoding="utf-8") if flush_path else None

    def evaluate(cell_fuser, item):
        (seq, label), density, target_spec = item
        target = resolve_target(target_spec, seq.num_frames)
        condensed = cell_fuser(seq, density, target)
        decoded = greedy_decode(decoder_forward(decoder, condensed.frames))
        return {
            "id": seq.id,
            "T": seq.num_frames,
            "L": condensed.num_frames,
            "cer": token_error_rate(decoded, label),
            "cost": estimate_cost(condensed.num_frames, cost_model),
        }

    try:
        for name in fusers:
            cell_fuser = make_fuser(name, seed=seed)
            for target_spec in targets:
                items = [(pairs[i], densities[i], target_spec) for i in range(len(pairs))]
                started = time.perf_counter()
                if threads > 1:
                    with ThreadPoolExecutor(max_workers=threads) as pool:
                        results = list(pool.map(lambda it: evaluate(cell_fuser, it), items))
                else:
                    results = [evaluate(cell_fuser, it) for it in items]
                elapsed = time.perf_counter() - started
                row = {
                    "fuser": name,
                    "target": str(target_spec),
                    "mean_cer": float(np.mean([r["cer"] for r in results])),
                    "mean_ratio": float(np.mean([r["T"] / r["L"] for r in results])),
                    "mean_cost": float(np.mean([r["cost"] for r in results])),
                    "n": len(results),
                }
                rows.append(row)
                # wall clock is reported to the caller, never serialized, so
                # re-runs stay byte-identical
                row_with_time = dict(row, wall_clock_per_seq=elapsed / len(results))
                for r in results:
                    traces.append(dict(r, fuser=name, target=str(target_spec)))
                if flush_fh:
                    flush_fh.write(json.dumps(row) + "\n")
                    flush_fh.flush()
                rows[-1] = row_with_time
    except Exception as exc:
        if flush_fh:
            flush_fh.write(json.dumps({"status": "failed", "error": str(exc)}) + "\n")
            flush_fh.close()
        raise
    if flush_fh:
        flush_fh.close()
    note = {
        "reference_full_scale_tflops": {str(k): v for k, v in FULL_SCALE_TFLOPS.items()},
        "note": "published full-scale measurements shown for orientation; "
        "not reproduced by this proxy cost model",
    }
    return BenchReport(rows=rows, traces=traces, reference_note=note)


def write_report(report: BenchReport, out_dir: str | Path, include_timings: bool = False) -> None:
    """Emit ``report.jsonl``, ``traces.jsonl``, ``summary.csv``, ``curves.dat``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = ["fuser", "target", "mean_cer", "mean_ratio", "mean_cost", "n"]
    if include_timings:
        columns.append("wall_clock_per_seq")

    with open(out_dir / "report.jsonl", "w", encoding="utf-8") as fh:
        for row in report.rows:
            fh.write(json.dumps({k: row[k] for k in columns}) + "\n")
        fh.write(json.dumps(report.reference_note) + "\n")

    with open(out_dir / "traces.jsonl", "w", encoding="utf-8") as fh:
        for tr in report.traces:
            fh.write(json.dumps(tr) + "\n")

    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: row[k] for k in columns})

    # gnuplot-friendly blocks: one block per fuser, target label vs mean CER
    with open(out_dir / "curves.dat", "w", encoding="utf-8") as fh:
        fusers = list(dict.fromkeys(r["fuser"] for r in report.rows))
        for name in fusers:
            fh.write(f"# fuser: {name}\n")
            for row in report.rows:
                if row["fuser"] == name:
                    fh.write(f"{row['target']}\t{row['mean_cer']:.6f}\t{row['mean_cost']:.6f}\n")
            fh.write("\n\n")
