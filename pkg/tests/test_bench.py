"""Benchmark: integrity gate, CSV shape, and the same-work sanity bound."""

import csv

import pytest

import rnf.bench as bench_mod
from rnf.bench import BenchConfig, BenchIntegrityError, run_bench, write_bench_csv


def small_config(**overrides):
    params = dict(batch_size=2, sentence_length=8, window=3, hidden_size=4,
                  embed_dim=3, workers=(1, 2), repetitions=3, warmup=1, seed=0)
    params.update(overrides)
    return BenchConfig(**params)


class TestBenchConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="repetitions"):
            small_config(repetitions=2)
        with pytest.raises(ValueError, match="window"):
            small_config(sentence_length=2, window=5)
        with pytest.raises(ValueError, match="workers"):
            small_config(workers=())


class TestRunBench:
    def test_rows_cover_mode_worker_grid(self):
        rows = run_bench(small_config())
        pairs = {(r["mode"], r["workers"]) for r in rows}
        assert pairs == {("rnn", 1), ("rnn", 2), ("rnf", 1), ("rnf", 2)}
        for row in rows:
            assert row["median_ms"] > 0.0
            assert row["speedup_vs_rnn_1worker"] >= 0.0

    def test_csv_parses_with_one_row_per_pair(self, tmp_path):
        rows = run_bench(small_config())
        path = tmp_path / "bench.csv"
        write_bench_csv(rows, path)
        with open(path, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == len(rows)
        assert {("rnn", "1"), ("rnn", "2"), ("rnf", "1"), ("rnf", "2")} == {
            (r["mode"], r["workers"]) for r in parsed}
        for r in parsed:
            float(r["median_ms"])
            float(r["speedup_vs_rnn_1worker"])

    def test_integrity_gate_blocks_timing(self, monkeypatch):
        # an impossible tolerance forces the cross-check to fail before timing
        monkeypatch.setattr(bench_mod, "CROSS_CHECK_TOL", -1.0)
        with pytest.raises(BenchIntegrityError, match="differ"):
            run_bench(small_config())

    def test_full_window_rnf_within_3x_of_rnn(self):
        # m == n: one window doing exactly the work of the full-sequence RNN
        cfg = small_config(batch_size=4, sentence_length=12, window=12,
                           hidden_size=16, embed_dim=8, workers=(1,), repetitions=5)
        rows = run_bench(cfg)
        rnn = next(r for r in rows if r["mode"] == "rnn" and r["workers"] == 1)
        rnf = next(r for r in rows if r["mode"] == "rnf" and r["workers"] == 1)
        assert rnf["median_ms"] <= 3.0 * rnn["median_ms"]

    def test_backward_mode_runs(self):
        rows = run_bench(small_config(include_backward=True, workers=(1,)))
        assert len(rows) == 2
