"""Randomized verification suites pitting fast paths against brute force.

Three suites, each generating seeded random instances:

* ``ctc``: the dynamic-programming loss against exhaustive alignment
  enumeration.
* ``grad``: the analytic loss gradient against central finite differences,
  plus the row-sum-zero identity.
* ``pairs``: vectorized top-r pair selection against a full sort under the
  documented tie-break, with heavy duplicate values mixed in.

Each runner returns a summary dict with a ``passed`` flag and its maximum
observed error, so callers can gate on it or print it.
"""

from __future__ import annotations

import time

import numpy as np

from .ctc import ctc_grad, ctc_log_loss, enumerate_alignments_oracle
from .fusion import select_pairs
from .seeding import substream

__all__ = ["ctc_suite", "grad_suite", "pairs_suite", "run_suites", "SUITE_NAMES"]

SUITE_NAMES = ("ctc", "grad", "pairs")


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _random_instance(rng, max_frames, max_vocab, max_label):
    t = int(rng.integers(1, max_frames + 1))
    v = int(rng.integers(1, max_vocab + 1))
    max_len = min(max_label, (t - 1) // 2)
    ell = int(rng.integers(0, max_len + 1))
    label = [int(x) for x in rng.integers(1, v + 1, size=ell)]
    grid = _log_softmax_rows(rng.normal(0.0, 2.0, size=(t, v + 1)))
    return grid, label


def ctc_suite(
    trials: int = 1000,
    max_frames: int = 8,
    max_vocab: int = 3,
    max_label: int = 3,
    seed: int = 0,
    tolerance: float = 1e-9,
) -> dict:
    """DP loss vs. exhaustive enumeration over random small instances."""
    rng = substream(seed, "oracle-ctc")
    started = time.perf_counter()
    max_err = 0.0
    for _ in range(trials):
        grid, label = _random_instance(rng, max_frames, max_vocab, max_label)
        dp = ctc_log_loss(grid, label)
        brute = enumerate_alignments_oracle(grid, label)
        max_err = max(max_err, abs(dp - brute))
    return {
        "suite": "ctc",
        "trials": trials,
        "max_abs_err": max_err,
        "tolerance": tolerance,
        "elapsed_s": time.perf_counter() - started,
        "passed": max_err <= tolerance,
    }


def grad_suite(
    trials: int = 100,
    max_frames: int = 6,
    max_vocab: int = 4,
    max_label: int = 2,
    step: float = 1e-5,
    seed: int = 0,
    tolerance: float = 1e-4,
    row_sum_tolerance: float = 1e-10,
) -> dict:
    """Analytic gradient vs. central differences through the softmax.

    The error is relative per element with a ``1e-4`` absolute floor (tiny
    entries are dominated by finite-difference cancellation noise).
    """
    rng = substream(seed, "oracle-grad")
    started = time.perf_counter()
    max_rel = 0.0
    max_row_sum = 0.0
    for _ in range(trials):
        t = int(rng.integers(1, max_frames + 1))
        v = int(rng.integers(1, max_vocab + 1))
        max_len = min(max_label, (t - 1) // 2)
        ell = int(rng.integers(0, max_len + 1))
        label = [int(x) for x in rng.integers(1, v + 1, size=ell)]
        logits = rng.normal(0.0, 1.5, size=(t, v + 1))

        analytic = ctc_grad(_log_softmax_rows(logits), label)
        max_row_sum = max(max_row_sum, float(np.abs(analytic.sum(axis=1)).max()))

        fd = np.zeros_like(logits)
        for i in range(t):
            for k in range(v + 1):
                bumped = logits.copy()
                bumped[i, k] += step
                up = -ctc_log_loss(_log_softmax_rows(bumped), label)
                bumped[i, k] -= 2 * step
                down = -ctc_log_loss(_log_softmax_rows(bumped), label)
                fd[i, k] = (up - down) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-4)
        max_rel = max(max_rel, float((np.abs(analytic - fd) / denom).max()))
    return {
        "suite": "grad",
        "trials": trials,
        "max_rel_err": max_rel,
        "max_row_sum": max_row_sum,
        "tolerance": tolerance,
        "row_sum_tolerance": row_sum_tolerance,
        "elapsed_s": time.perf_counter() - started,
        "passed": max_rel <= tolerance and max_row_sum <= row_sum_tolerance,
    }


def pairs_suite(trials: int = 1000, max_pairs: int = 64, seed: int = 0) -> dict:
    """Vectorized selection vs. full-sort brute force with duplicate-heavy inputs."""
    rng = substream(seed, "oracle-pairs")
    started = time.perf_counter()
    mismatches = 0
    duplicate_heavy = 0
    for trial in range(trials):
        n = int(rng.integers(1, max_pairs + 1))
        if trial % 2 == 0:
            # quantize onto few levels so >= 30% of entries collide
            levels = rng.uniform(-1, 1, size=max(1, n // 3))
            sims = levels[rng.integers(0, levels.shape[0], size=n)]
        else:
            sims = rng.uniform(-1, 1, size=n)
        if n - np.unique(sims).shape[0] >= 0.3 * n:
            duplicate_heavy += 1
        r = int(rng.integers(0, n + 1))
        fast = select_pairs(sims, r).tolist()
        slow = sorted(sorted(range(n), key=lambda i: (-sims[i], i))[:r])
        if fast != slow:
            mismatches += 1
    return {
        "suite": "pairs",
        "trials": trials,
        "mismatches": mismatches,
        "duplicate_heavy_vectors": duplicate_heavy,
        "elapsed_s": time.perf_counter() - started,
        "passed": mismatches == 0,
    }


def run_suites(names=SUITE_NAMES, seed: int = 0, trials: int | None = None, max_frames: int | None = None) -> list[dict]:
    """Run the requested suites with their default budgets unless overridden."""
    results = []
    for name in names:
        if name == "ctc":
            kwargs = {"seed": seed}
            if trials:
                kwargs["trials"] = trials
            if max_frames:
                kwargs["max_frames"] = max_frames
            results.append(ctc_suite(**kwargs))
        elif name == "grad":
            kwargs = {"seed": seed}
            if trials:
                kwargs["trials"] = trials
            if max_frames:
                kwargs["max_frames"] = max_frames
            results.append(grad_suite(**kwargs))
        elif name == "pairs":
            kwargs = {"seed": seed}
            if trials:
                kwargs["trials"] = trials
            results.append(pairs_suite(**kwargs))
        else:
            raise ValueError(f"unknown oracle suite {name!r}; expected one of {SUITE_NAMES}")
    return results
