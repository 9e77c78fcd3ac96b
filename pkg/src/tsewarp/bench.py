"""Throughput of batched wavefront evaluation vs the single-threaded reference."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import NumericError, stack_samples
from .kernel import (
    _all_pairs,
    _batch_reference_distances,
    _batch_wavefront_distances,
    set_workers,
)

AGREEMENT_RTOL = 1e-9


class EngineDisagreement(NumericError):
    pass


@dataclass
class BenchResult:
    n: int
    m: int
    nf: int
    pairs: int
    repeat: int
    workers: int
    dtype: str
    reference_s: float
    wavefront_s: float
    max_rel_diff: float

    @property
    def speedup(self) -> float:
        return self.reference_s / self.wavefront_s

    def table(self) -> str:
        rows = [
            ("engine", "workers", "mean_s", "pairs_per_s"),
            ("reference", "1", f"{self.reference_s:.6f}", f"{self.pairs / self.reference_s:.2f}"),
            ("wavefront", str(self.workers), f"{self.wavefront_s:.6f}", f"{self.pairs / self.wavefront_s:.2f}"),
        ]
        widths = [max(len(r[k]) for r in rows) for k in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"speedup {self.speedup:.2f}x  (n={self.n} m={self.m} nf={self.nf} "
                     f"pairs={self.pairs} dtype={self.dtype} max_rel_diff={self.max_rel_diff:.3g})")
        return "\n".join(lines)


def run_bench(n=512, m=512, nf=64, pairs=64, repeat=3, workers=None, dtype="float64", seed=0) -> BenchResult:
    if min(n, m, nf, pairs, repeat) < 1:
        raise ValueError("sizes, pairs and repeat must be >= 1")
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    # pairs = n_samples x n_classes, as close to square as possible
    n_c = max(d for d in range(1, int(np.sqrt(pairs)) + 1) if pairs % d == 0)
    n_s = pairs // n_c
    C = rng.normal(size=(n_c, n, nf)).astype(dt)
    U = np.exp(rng.normal(0.0, 0.1, size=(n_c, n, nf))).astype(dt)
    samples = [rng.normal(size=(m, nf)).astype(dt) for _ in range(n_s)]
    X, x_off, x_len = stack_samples(samples)
    X = X.astype(dt)
    pair_s, pair_c = _all_pairs(n_s, n_c)

    ref = np.empty(pairs)
    wav = np.empty(pairs)
    used = set_workers(workers)
    _batch_reference_distances(X, x_off, x_len, C, U, pair_s, pair_c, False, ref)
    _batch_wavefront_distances(X, x_off, x_len, C, U, pair_s, pair_c, wav)
    rel = float(np.max(np.abs(wav - ref) / np.maximum(1.0, np.abs(ref))))
    if not rel <= AGREEMENT_RTOL:
        raise EngineDisagreement(f"engines disagree: max relative difference {rel:.3g}")

    def timed(fn, *args):
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn(*args)
            times.append(time.perf_counter() - t0)
        return float(np.mean(times))

    t_ref = timed(_batch_reference_distances, X, x_off, x_len, C, U, pair_s, pair_c, False, ref)
    t_wav = timed(_batch_wavefront_distances, X, x_off, x_len, C, U, pair_s, pair_c, wav)
    return BenchResult(n, m, nf, pairs, repeat, used, dt.name, t_ref, t_wav, rel)
