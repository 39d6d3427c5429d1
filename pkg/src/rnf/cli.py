"""Command-line entry points: train, eval, analyze, bench, search.

Options come from a flat ``key=value`` config file (``--config``) with
command-line flags taking precedence.  Exit codes: 0 success, 2 bad
config or usage, 3 numeric abort during training, 4 checkpoint or
vocabulary mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys

from .analysis import build_phrase_index, emit_analysis_report, hit_rate, llc_ratio
from .bench import BenchConfig, BenchIntegrityError, run_bench, write_bench_csv
from .data import (
    CheckpointError,
    EmbeddingFormatError,
    QaFormatError,
    TreeParseError,
    binarize_label,
    load_embeddings,
    load_qa_tsv,
    load_treebank,
)
from .estimators import SentenceClassifier, SentenceMatcher, fit_from_qa_examples
from .training import SearchSpace, TrainingError, random_search

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISMATCH = 4

TASKS = ("sst2", "sst5", "qa")


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _merged_options(args, keys) -> dict[str, str]:
    options = read_config_file(args.config) if args.config else {}
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            options[key] = str(value)
    return options


def _require(options, key):
    if key not in options or options[key] == "":
        raise ConfigError(f"missing required option {key!r} (config file or flag)")
    return options[key]


def _existing_path(options, key):
    path = _require(options, key)
    if not os.path.exists(path):
        raise ConfigError(f"option {key!r}: path does not exist: {path}")
    return path


def _load_sst(path, task):
    """Treebank file -> (sentences, labels); sst2 collapses and drops neutral roots."""
    trees = load_treebank(path)
    sentences, labels = [], []
    for tree in trees:
        label = tree.label if task == "sst5" else binarize_label(tree.label)
        if label is None:
            continue
        sentences.append(tree.tokens())
        labels.append(label)
    return sentences, labels


def _build_vocab(options, sentences, seed):
    if "embeddings" in options and options["embeddings"]:
        tokens = {t for s in sentences for t in s}
        return load_embeddings(_existing_path(options, "embeddings"), tokens)
    from .data import build_vocabulary

    return build_vocabulary(sentences, dim=int(options.get("embed_dim", 50)), seed=seed)


def _estimator_kwargs(options, seed, threads):
    keys = {
        "window": int, "feature_maps": int, "activation": str,
        "dropout_embedding": float, "dropout_pooling": float,
        "dropout_rnn_input": float, "dropout_rnn_recurrent": float,
        "learning_rate": float, "batch_size": int, "max_epochs": int,
        "patience": int, "validation_fraction": float, "plan": str,
    }
    kwargs = {name: cast(options[name]) for name, cast in keys.items() if name in options}
    kwargs["filter_kind"] = options.get("filter", "rnf-lstm")
    kwargs["seed"] = seed
    kwargs["threads"] = threads
    return kwargs


def _print_metric(name, value):
    print(f"{name}: {value:.6f}")


def cmd_train(args) -> int:
    options = _merged_options(args, ("task", "filter", "window", "seed", "threads", "out"))
    task = options.get("task", "sst5")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    seed = int(options.get("seed", 0))
    threads = int(options.get("threads", 1))
    out_dir = options.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "model.ckpt")

    if task == "qa":
        train_examples = load_qa_tsv(_existing_path(options, "train"))
        dev_examples = load_qa_tsv(_existing_path(options, "dev")) if "dev" in options else None
        vocab = _build_vocab(options, [ex.question for ex in train_examples]
                             + [ex.answer for ex in train_examples], seed)
        matcher = SentenceMatcher(vocabulary=vocab, **_estimator_kwargs(options, seed, threads))
        fit_from_qa_examples(matcher, train_examples, dev_examples)
        matcher.save(checkpoint_path)
        _print_metric("dev_metric", matcher.trial_.dev_metric)
        if "test" in options:
            test_examples = load_qa_tsv(_existing_path(options, "test"))
            test_map, test_mrr = matcher.map_mrr(test_examples)
            matcher.trial_.test_metric = test_map  # recorded, never used for selection
            _print_metric("test_map", test_map)
            _print_metric("test_mrr", test_mrr)
    else:
        sentences, labels = _load_sst(_existing_path(options, "train"), task)
        dev = _load_sst(_existing_path(options, "dev"), task) if "dev" in options else (None, None)
        vocab = _build_vocab(options, sentences, seed)
        clf = SentenceClassifier(vocabulary=vocab, **_estimator_kwargs(options, seed, threads))
        clf.fit(sentences, labels, x_dev=dev[0], y_dev=dev[1])
        clf.save(checkpoint_path)
        _print_metric("dev_metric", clf.trial_.dev_metric)
        if "test" in options:
            x_test, y_test = _load_sst(_existing_path(options, "test"), task)
            test_accuracy = clf.score(x_test, y_test)
            clf.trial_.test_metric = test_accuracy  # recorded, never used for selection
            _print_metric("test_accuracy", test_accuracy)
    print(f"checkpoint: {checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    options = _merged_options(args, ("task", "checkpoint", "data", "seed", "threads"))
    task = options.get("task", "sst5")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    checkpoint = _existing_path(options, "checkpoint")
    data_path = _existing_path(options, "data")
    if task == "qa":
        matcher = SentenceMatcher.load(checkpoint)
        examples = load_qa_tsv(data_path)
        map_score, mrr_score = matcher.map_mrr(examples)
        _print_metric("map", map_score)
        _print_metric("mrr", mrr_score)
    else:
        clf = SentenceClassifier.load(checkpoint)
        sentences, labels = _load_sst(data_path, task)
        _print_metric("accuracy", clf.score(sentences, labels))
    return EXIT_OK


def cmd_analyze(args) -> int:
    options = _merged_options(args, ("data", "out", "plot", "granularity",
                                     "checkpoint-linear", "checkpoint-rnf", "match-mode"))
    data_path = _existing_path(options, "data")
    granularity = options.get("granularity", "fine")
    match_mode = options.get("match-mode", "exact")
    trees = load_treebank(data_path)
    if granularity == "binary":
        kept = [t for t in trees if binarize_label(t.label) is not None]
    else:
        kept = trees
    entries = build_phrase_index(trees, granularity=granularity)
    sentences = [t.tokens() for t in kept]

    estimators = {}
    for name, key in (("linear", "checkpoint-linear"), ("rnf", "checkpoint-rnf")):
        if key in options and options[key]:
            estimators[name] = SentenceClassifier.load(_existing_path(options, key))

    lengths = sorted({end - start + 1 for e in entries for (start, end) in e.span_labels}
                     | {est.window for est in estimators.values()})
    rows = []
    for m in lengths:
        ratio, support = llc_ratio(entries, m)
        row = {"m": m, "llc_ratio": ratio, "llc_support": support,
               "hit_rate_linear": None, "hit_rate_rnf": None, "sentences_evaluated": None}
        rows.append(row)
    for name, est in estimators.items():
        # a model detects m-grams of its own window width: report on that row only
        rate, evaluated = hit_rate(est.feature_map, sentences, entries, match_mode=match_mode)
        for row in rows:
            if row["m"] == est.window:
                row[f"hit_rate_{name}"] = rate
                row["sentences_evaluated"] = evaluated
    out_path = options.get("out", "analysis.csv")
    emit_analysis_report(rows, out_path, plot_path=options.get("plot"))
    print(f"analysis report: {out_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    options = _merged_options(args, ("out", "seed", "workers", "repetitions", "batch-size",
                                     "sentence-length", "window", "feature_maps", "embed_dim"))
    workers = tuple(int(w) for w in options.get("workers", "1,2,4").split(","))
    cfg = BenchConfig(
        batch_size=int(options.get("batch-size", 32)),
        sentence_length=int(options.get("sentence-length", 48)),
        window=int(options.get("window", 6)),
        hidden_size=int(options.get("feature_maps", 128)),
        embed_dim=int(options.get("embed_dim", 64)),
        workers=workers,
        repetitions=int(options.get("repetitions", 5)),
        seed=int(options.get("seed", 0)),
    )
    rows = run_bench(cfg)
    out_path = options.get("out", "bench.csv")
    write_bench_csv(rows, out_path)
    for row in rows:
        print(f"{row['mode']} workers={row['workers']}: {row['median_ms']:.3f} ms "
              f"(speedup vs rnn@1: {row['speedup_vs_rnn_1worker']:.3f}x)")
    print(f"bench report: {out_path}")
    return EXIT_OK


def cmd_search(args) -> int:
    options = _merged_options(args, ("task", "filter", "budget", "seed", "threads", "out"))
    task = options.get("task", "sst5")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    seed = int(options.get("seed", 0))
    threads = int(options.get("threads", 1))
    budget = int(options.get("budget", 100))
    filter_kind = options.get("filter", "rnf-lstm")
    out_dir = options.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "search_log.csv")

    if task == "qa":
        train_examples = load_qa_tsv(_existing_path(options, "train"))
        dev_examples = load_qa_tsv(_existing_path(options, "dev")) if "dev" in options else None
        vocab = _build_vocab(options, [ex.question for ex in train_examples]
                             + [ex.answer for ex in train_examples], seed)

        def run_trial(config, trial_seed):
            kwargs = _estimator_kwargs(options, trial_seed, threads)
            kwargs.update(filter_kind=filter_kind, window=config["window"],
                          feature_maps=config["hidden_units"],
                          dropout_embedding=config["dropout_embedding"],
                          dropout_pooling=config["dropout_pooling"],
                          dropout_rnn_input=config["dropout_rnn_input"],
                          dropout_rnn_recurrent=config["dropout_rnn_recurrent"])
            matcher = SentenceMatcher(vocabulary=vocab, **kwargs)
            fit_from_qa_examples(matcher, train_examples, dev_examples)
            result = matcher.trial_
            result.config = dict(config)
            return result
    else:
        sentences, labels = _load_sst(_existing_path(options, "train"), task)
        dev = _load_sst(_existing_path(options, "dev"), task) if "dev" in options else (None, None)
        vocab = _build_vocab(options, sentences, seed)

        def run_trial(config, trial_seed):
            kwargs = _estimator_kwargs(options, trial_seed, threads)
            kwargs.update(filter_kind=filter_kind, window=config["window"],
                          feature_maps=config["hidden_units"],
                          dropout_embedding=config["dropout_embedding"],
                          dropout_pooling=config["dropout_pooling"],
                          dropout_rnn_input=config["dropout_rnn_input"],
                          dropout_rnn_recurrent=config["dropout_rnn_recurrent"])
            clf = SentenceClassifier(vocabulary=vocab, **kwargs)
            clf.fit(sentences, labels, x_dev=dev[0], y_dev=dev[1])
            result = clf.trial_
            result.config = dict(config)
            return result

    best, results = random_search(SearchSpace(), run_trial, seed=seed,
                                  filter_kind=filter_kind, budget=budget, log_path=log_path)
    print(f"best dev metric: {best.dev_metric:.6f} with {best.config}")
    print(f"search log: {log_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="global RNG seed")
        p.add_argument("--threads", type=int, help="worker threads (1 = bit-deterministic reference)")

    p_train = sub.add_parser("train", help="train one model and write a checkpoint")
    common(p_train)
    p_train.add_argument("--task", choices=TASKS)
    p_train.add_argument("--filter", choices=("linear", "rnf-gru", "rnf-lstm"))
    p_train.add_argument("--window", type=int, help="filter window width")
    p_train.add_argument("--out", help="output directory")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--task", choices=TASKS)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--data")
    p_eval.set_defaults(fn=cmd_eval)

    p_analyze = sub.add_parser("analyze", help="label-consistency and hit-rate report")
    common(p_analyze)
    p_analyze.add_argument("--data", help="treebank file")
    p_analyze.add_argument("--granularity", choices=("fine", "binary"))
    p_analyze.add_argument("--match-mode", choices=("exact", "containment"))
    p_analyze.add_argument("--checkpoint-linear")
    p_analyze.add_argument("--checkpoint-rnf")
    p_analyze.add_argument("--out", help="CSV output path")
    p_analyze.add_argument("--plot", help="optional SVG output path")
    p_analyze.set_defaults(fn=cmd_analyze)

    p_bench = sub.add_parser("bench", help="windowed recurrent filter vs full-sequence RNN timing")
    common(p_bench)
    p_bench.add_argument("--workers", help="comma-separated worker counts")
    p_bench.add_argument("--repetitions", type=int)
    p_bench.add_argument("--batch-size", type=int)
    p_bench.add_argument("--sentence-length", type=int)
    p_bench.add_argument("--window", type=int)
    p_bench.add_argument("--out", help="CSV output path")
    p_bench.set_defaults(fn=cmd_bench)

    p_search = sub.add_parser("search", help="random hyperparameter search")
    common(p_search)
    p_search.add_argument("--task", choices=TASKS)
    p_search.add_argument("--filter", choices=("linear", "rnf-gru", "rnf-lstm"))
    p_search.add_argument("--budget", type=int)
    p_search.add_argument("--out", help="output directory")
    p_search.set_defaults(fn=cmd_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TreeParseError, EmbeddingFormatError, QaFormatError,
            FileNotFoundError, ValueError) as err:
        if isinstance(err, CheckpointError):
            print(f"error: {err}", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except BenchIntegrityError as err:
        print(f"benchmark aborted: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
