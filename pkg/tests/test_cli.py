"""CLI subcommands end to end on tiny fixtures: outputs, exit codes, determinism."""

import csv

import pytest

from rnf.cli import main

TREEBANK = """\
(3 (3 (2 truly) (3 great)) (2 (2 fun) (2 film)))
(1 (1 (2 sadly) (1 boring)) (2 (2 dull) (2 plot)))
(4 (2 (2 what) (2 a)) (4 (4 wonderful) (2 surprise)))
(0 (0 (0 awful) (2 mess)) (2 (2 to) (2 watch)))
(3 (2 (2 it) (2 was)) (3 (3 enjoyable) (2 overall)))
(1 (2 (2 it) (2 was)) (1 (1 tedious) (2 overall)))
"""

QA_TSV = """\
q1\twho won the game\tthe game was won by cats\t1
q1\twho won the game\tweather was rainy\t0
q1\twho won the game\tdogs lost badly\t0
q2\twhat is the color\tthe color is blue\t1
q2\twhat is the color\tpizza tastes fine\t0
"""


@pytest.fixture
def workspace(tmp_path):
    train = tmp_path / "train.txt"
    train.write_text(TREEBANK)
    dev = tmp_path / "dev.txt"
    dev.write_text(TREEBANK)
    qa = tmp_path / "qa.tsv"
    qa.write_text(QA_TSV)
    out = tmp_path / "out"
    return {"train": train, "dev": dev, "qa": qa, "out": out, "root": tmp_path}


def config_file(tmp_path, **pairs):
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in pairs.items()))
    return path


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTrain:
    def test_tiny_fixture_trains_and_checkpoints(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="sst2", filter="rnf-gru", window=2,
                          feature_maps=6, embed_dim=8, max_epochs=2, train=workspace["train"],
                          dev=workspace["dev"], test=workspace["dev"])
        code, out, _ = run(capsys, ["train", "--config", str(cfg),
                                    "--out", str(workspace["out"]), "--seed", "1"])
        assert code == 0
        assert (workspace["out"] / "model.ckpt").exists()
        assert "dev_metric:" in out and "test_accuracy:" in out

    def test_missing_data_path_exits_2(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="sst5", train=workspace["root"] / "nope.txt")
        code, _, err = run(capsys, ["train", "--config", str(cfg)])
        assert code == 2
        assert "nope.txt" in err

    def test_same_seed_same_metrics(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="sst5", filter="linear", window=2,
                          feature_maps=6, embed_dim=8, max_epochs=2, train=workspace["train"],
                          dev=workspace["dev"])
        outputs = []
        for run_dir in ("a", "b"):
            code, out, _ = run(capsys, ["train", "--config", str(cfg), "--seed", "7",
                                        "--out", str(workspace["out"] / run_dir)])
            assert code == 0
            outputs.append([line for line in out.splitlines() if line.startswith("dev_metric:")])
            assert outputs[-1]
        assert outputs[0] == outputs[1]

    def test_qa_task(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="qa", filter="rnf-gru", window=2,
                          feature_maps=6, embed_dim=8, max_epochs=2,
                          train=workspace["qa"], dev=workspace["qa"], test=workspace["qa"])
        code, out, _ = run(capsys, ["train", "--config", str(cfg),
                                    "--out", str(workspace["out"])])
        assert code == 0
        assert "test_map:" in out and "test_mrr:" in out


class TestEval:
    def train_first(self, workspace, capsys, task="sst2"):
        cfg = config_file(workspace["root"], task=task, filter="rnf-gru", window=2,
                          feature_maps=6, embed_dim=8, max_epochs=2,
                          train=workspace["train"], dev=workspace["dev"])
        code, _, _ = run(capsys, ["train", "--config", str(cfg), "--out", str(workspace["out"])])
        assert code == 0
        return workspace["out"] / "model.ckpt"

    def test_eval_trained_checkpoint(self, workspace, capsys):
        ckpt = self.train_first(workspace, capsys)
        code, out, _ = run(capsys, ["eval", "--task", "sst2", "--checkpoint", str(ckpt),
                                    "--data", str(workspace["dev"])])
        assert code == 0
        assert "accuracy:" in out

    def test_memorizing_eval_on_train_split(self, workspace, capsys):
        # long enough training to memorize the 4 binary fixtures exactly
        cfg = config_file(workspace["root"], task="sst2", filter="linear", window=2,
                          feature_maps=16, embed_dim=8, max_epochs=60, patience=30,
                          learning_rate=0.05, train=workspace["train"], dev=workspace["dev"])
        code, _, _ = run(capsys, ["train", "--config", str(cfg), "--out", str(workspace["out"])])
        assert code == 0
        code, out, _ = run(capsys, ["eval", "--task", "sst2",
                                    "--checkpoint", str(workspace["out"] / "model.ckpt"),
                                    "--data", str(workspace["train"])])
        assert code == 0
        assert "accuracy: 1.000000" in out

    def test_corrupt_checkpoint_exits_4(self, workspace, capsys):
        ckpt = self.train_first(workspace, capsys)
        blob = ckpt.read_bytes()
        ckpt.write_bytes(blob[:-5])
        code, _, err = run(capsys, ["eval", "--task", "sst2", "--checkpoint", str(ckpt),
                                    "--data", str(workspace["dev"])])
        assert code == 4
        assert "truncated" in err


class TestAnalyze:
    def test_emits_csv_with_exact_header(self, workspace, capsys):
        out_csv = workspace["root"] / "analysis.csv"
        code, _, _ = run(capsys, ["analyze", "--data", str(workspace["train"]),
                                  "--out", str(out_csv)])
        assert code == 0
        header = out_csv.read_text().splitlines()[0]
        assert header == "m,llc_ratio,llc_support,hit_rate_linear,hit_rate_rnf,sentences_evaluated"

    def test_with_checkpoints_and_plot(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="sst2", filter="linear", window=2,
                          feature_maps=6, embed_dim=8, max_epochs=2,
                          train=workspace["train"], dev=workspace["dev"])
        assert run(capsys, ["train", "--config", str(cfg), "--out", str(workspace["out"])])[0] == 0
        out_csv = workspace["root"] / "analysis.csv"
        plot = workspace["root"] / "analysis.svg"
        code, _, _ = run(capsys, ["analyze", "--data", str(workspace["train"]),
                                  "--checkpoint-linear", str(workspace["out"] / "model.ckpt"),
                                  "--out", str(out_csv), "--plot", str(plot)])
        assert code == 0
        with open(out_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert any(r["hit_rate_linear"] not in ("", None) for r in rows)
        assert plot.exists()


class TestBenchCommand:
    def test_small_run_emits_csv(self, workspace, capsys):
        out_csv = workspace["root"] / "bench.csv"
        code, out, _ = run(capsys, ["bench", "--batch-size", "2", "--sentence-length", "6",
                                    "--window", "3", "--workers", "1,2", "--repetitions", "3",
                                    "--out", str(out_csv)])
        assert code == 0
        with open(out_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {(r["mode"], r["workers"]) for r in rows} == {
            ("rnn", "1"), ("rnn", "2"), ("rnf", "1"), ("rnf", "2")}


class TestSearch:
    def test_budget_two_logs_two_rows(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="sst2", embed_dim=8, max_epochs=1,
                          feature_maps=4, train=workspace["train"], dev=workspace["dev"])
        code, out, _ = run(capsys, ["search", "--config", str(cfg), "--budget", "2",
                                    "--filter", "linear", "--out", str(workspace["out"])])
        assert code == 0
        log = workspace["out"] / "search_log.csv"
        with open(log, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3  # header + 2 trials
        assert "best dev metric" in out


class TestExitCodes:
    def test_training_abort_exits_3(self, workspace, capsys, monkeypatch):
        from rnf.training import TrainingError

        def exploding_fit(self, *args, **kwargs):
            raise TrainingError("non-finite loss at epoch 1")

        monkeypatch.setattr("rnf.estimators.SentenceClassifier.fit", exploding_fit)
        cfg = config_file(workspace["root"], task="sst5", filter="linear", window=2,
                          feature_maps=4, embed_dim=8, max_epochs=1,
                          train=workspace["train"], dev=workspace["dev"])
        code, _, err = run(capsys, ["train", "--config", str(cfg)])
        assert code == 3
        assert "training aborted" in err


class TestUsage:
    def test_unknown_task_exits_2(self, workspace, capsys):
        cfg = config_file(workspace["root"], task="mnist", train=workspace["train"])
        code, _, err = run(capsys, ["train", "--config", str(cfg)])
        assert code == 2
        assert "mnist" in err

    def test_bad_config_line_exits_2(self, workspace, capsys):
        path = workspace["root"] / "broken.cfg"
        path.write_text("this is not a pair\n")
        code, _, err = run(capsys, ["train", "--config", str(path)])
        assert code == 2
        assert "key=value" in err
