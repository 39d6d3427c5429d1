"""Throughput benchmark: windowed recurrent convolution vs a full-sequence RNN.

Timings are hardware-specific and only ever reported.  Before any timing
is accepted, the windowed (parallel) forward pass must match the batched
sequential one elementwise, otherwise the benchmark aborts.
"""

from __future__ import annotations

import csv
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import LstmCell, run_rnn
from .filters import FilterSpec, rnf_forward

CROSS_CHECK_TOL = 1e-12


class BenchIntegrityError(RuntimeError):
    """Parallel and sequential outputs diverged; timings would be meaningless."""


@dataclass(frozen=True)
class BenchConfig:
    batch_size: int = 32
    sentence_length: int = 48
    window: int = 6
    hidden_size: int = 128
    embed_dim: int = 64
    workers: tuple = (1, 2, 4)
    repetitions: int = 5
    warmup: int = 1
    include_backward: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "sentence_length", "window", "hidden_size", "embed_dim", "warmup"):
            if getattr(self, name) < (0 if name == "warmup" else 1):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be at least 3, got {self.repetitions}")
        if self.sentence_length < self.window:
            raise ValueError("sentence_length must be at least the window width")
        if not self.workers or any(w < 1 for w in self.workers):
            raise ValueError("workers must be a nonempty tuple of positive counts")


def _forward_rnf(cell, spec, sentences, threads):
    outs = [rnf_forward(cell, s, spec, plan="windowed", threads=threads).values for s in sentences]
    return outs


def _forward_rnn(cell, sentences, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: run_rnn(cell, s), sentences))
    return [run_rnn(cell, s) for s in sentences]


def _timed(fn, cfg: BenchConfig) -> float:
    """Median wall time (ms) over the configured repetitions, after warmup."""
    for _ in range(cfg.warmup):
        fn()
    samples = []
    for _ in range(cfg.repetitions):
        start = time.perf_counter()
        if cfg.include_backward:
            with ad.Tape() as tape:
                outs = fn()
                total = ad.add_n([ad.sum_all(o) for o in outs])
                tape.backward(total)
        else:
            fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(samples)


def run_bench(cfg: BenchConfig) -> list[dict]:
    """Rows of (mode, workers, median_ms, speedup_vs_rnn_1worker)."""
    rng = np.random.default_rng(cfg.seed)
    cell = LstmCell(cfg.embed_dim, cfg.hidden_size, rng)
    spec = FilterSpec(kind="rnf-lstm", window=cfg.window, feature_maps=cfg.hidden_size)
    sentences = [Tensor(rng.standard_normal((cfg.sentence_length, cfg.embed_dim)))
                 for _ in range(cfg.batch_size)]

    # Integrity gate: the parallel plan must reproduce the sequential features.
    reference = [rnf_forward(cell, s, spec, plan="batched").values.data for s in sentences[:4]]
    for workers in cfg.workers:
        for s, ref in zip(sentences[:4], reference):
            got = rnf_forward(cell, s, spec, plan="windowed", threads=workers).values.data
            gap = float(np.max(np.abs(got - ref)))
            if gap > CROSS_CHECK_TOL:
                raise BenchIntegrityError(
                    f"windowed ({workers} workers) vs sequential features differ by {gap:.3e} "
                    f"(> {CROSS_CHECK_TOL:.0e}) on shape {ref.shape}")

    rows = []
    rnn_baseline = _timed(lambda: _forward_rnn(cell, sentences, 1), cfg)
    for workers in cfg.workers:
        rnn_ms = rnn_baseline if workers == 1 else _timed(lambda: _forward_rnn(cell, sentences, workers), cfg)
        rows.append({"mode": "rnn", "workers": workers, "median_ms": rnn_ms})
    for workers in cfg.workers:
        rnf_ms = _timed(lambda: _forward_rnf(cell, spec, sentences, workers), cfg)
        rows.append({"mode": "rnf", "workers": workers, "median_ms": rnf_ms})
    for row in rows:
        row["speedup_vs_rnn_1worker"] = rnn_baseline / row["median_ms"]
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "workers", "median_ms", "speedup_vs_rnn_1worker"])
        for row in rows:
            writer.writerow([row["mode"], row["workers"],
                             f"{row['median_ms']:.3f}", f"{row['speedup_vs_rnn_1worker']:.3f}"])
