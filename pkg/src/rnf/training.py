"""Adam optimization, the training loop, random search and ranking metrics."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class TrainingError(RuntimeError):
    """Numeric failure (NaN/Inf) that aborts the current trial."""


class SearchError(RuntimeError):
    """All trials of a random search failed."""


class Adam:
    """Adam with bias correction; moments mirror the parameter shapes."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    plan: str = "auto"
    threads: int = 1
    seed: int = 0


@dataclass
class TrialResult:
    """Outcome of one training run; dev_metric drove model selection."""

    config: dict
    dev_metric: float
    test_metric: float | None
    epochs_run: int
    wall_time: float
    seed: int


def _minibatches(items, batch_size, order):
    for start in range(0, len(order), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def train(net, train_set, dev_set, config: TrainConfig, dev_eval_fn=None) -> TrialResult:
    """Epoch loop with seeded shuffling, early stopping and best-dev restore.

    ``net`` exposes ``batch_loss``, ``named_parameters`` and ``evaluate``;
    ``dev_eval_fn(net)``, when given, replaces the default dev evaluation
    (useful for scripted tests).  Stops once the dev metric has not
    improved for ``patience`` consecutive epochs.
    """
    if not train_set:
        raise ValueError("train() needs a nonempty training set")
    if not dev_set and dev_eval_fn is None:
        raise ValueError("train() needs a nonempty dev set or a dev_eval_fn")
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = net.named_parameters()
    optimizer = Adam(params, lr=config.learning_rate)
    best_metric = -np.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {}
    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train_set))
        for batch in _minibatches(train_set, config.batch_size, order):
            with ad.Tape() as tape:
                loss = net.batch_loss(batch, mode="train", rng=rng,
                                      plan=config.plan, threads=config.threads)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch} "
                                        f"(first example: {_describe_example(batch[0])})")
                tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
        metric = dev_eval_fn(net) if dev_eval_fn is not None else net.evaluate(
            dev_set, plan=config.plan, threads=config.threads)
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}
        elif epoch - best_epoch >= config.patience:
            break
    for name, p in params.items():
        p.data = best_params[name]
    return TrialResult(config=asdict(config), dev_metric=float(best_metric), test_metric=None,
                       epochs_run=epochs_run, wall_time=time.perf_counter() - started, seed=config.seed)


def _describe_example(example) -> str:
    try:
        tokens = example[0]
        return " ".join(tokens)[:60]
    except Exception:
        return repr(example)[:60]


def accuracy(predictions, golds) -> float:
    predictions = list(predictions)
    golds = list(golds)
    if not predictions or len(predictions) != len(golds):
        raise ValueError(f"accuracy needs equal nonempty sequences, got {len(predictions)} and {len(golds)}")
    return sum(int(p == g) for p, g in zip(predictions, golds)) / len(predictions)


def map_mrr(ranked) -> tuple[float, float]:
    """MAP and MRR over per-question (score, label) candidate lists.

    Candidates are ranked by score descending, ties keeping original
    order; questions without any positive candidate are excluded.
    """
    if not ranked:
        raise ValueError("map_mrr on an empty collection of questions")
    ap_values = []
    rr_values = []
    for candidates in ranked:
        if not candidates:
            raise ValueError("map_mrr: a question has no candidates")
        if not any(label for _, label in candidates):
            continue
        order = sorted(range(len(candidates)), key=lambda i: -candidates[i][0])
        hits = 0
        precisions = []
        first_rank = None
        for rank, i in enumerate(order, start=1):
            if candidates[i][1]:
                hits += 1
                precisions.append(hits / rank)
                if first_rank is None:
                    first_rank = rank
        ap_values.append(sum(precisions) / len(precisions))
        rr_values.append(1.0 / first_rank)
    if not ap_values:
        raise ValueError("map_mrr: no question has a positive candidate")
    return sum(ap_values) / len(ap_values), sum(rr_values) / len(rr_values)


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter grids sampled uniformly by random search."""

    hidden_units: tuple = (200, 300, 400)
    window_linear: tuple = (2, 3, 4, 5)
    window_rnf: tuple = (5, 6, 7, 8)
    dropout_rates: tuple = (0.0, 0.2, 0.4)
    budget: int = 100


CONFIG_FIELDS = ("hidden_units", "window", "dropout_embedding", "dropout_pooling",
                 "dropout_rnn_input", "dropout_rnn_recurrent")


def sample_config(space: SearchSpace, filter_kind: str, rng: np.random.Generator) -> dict:
    windows = space.window_linear if filter_kind == "linear" else space.window_rnf
    pick = lambda grid: grid[rng.integers(len(grid))]
    return {
        "hidden_units": int(pick(space.hidden_units)),
        "window": int(pick(windows)),
        "dropout_embedding": float(pick(space.dropout_rates)),
        "dropout_pooling": float(pick(space.dropout_rates)),
        "dropout_rnn_input": float(pick(space.dropout_rates)),
        "dropout_rnn_recurrent": float(pick(space.dropout_rates)),
    }


def random_search(space: SearchSpace, run_trial, seed: int, filter_kind: str = "rnf-lstm",
                  budget: int | None = None, log_path=None) -> tuple[TrialResult, list[TrialResult]]:
    """Uniform random draws over the grids; best trial by dev metric.

    ``run_trial(config, trial_seed) -> TrialResult`` does the actual
    training.  A trial that raises TrainingError is recorded with a NaN
    dev metric and the search continues; if every trial fails, the
    search itself fails.
    """
    budget = space.budget if budget is None else budget
    if budget < 1:
        raise ValueError(f"search budget must be positive, got {budget}")
    rng = np.random.default_rng(seed)
    results: list[TrialResult] = []
    failures = 0
    for trial_id in range(budget):
        config = sample_config(space, filter_kind, rng)
        trial_seed = int(rng.integers(2 ** 31))
        try:
            result = run_trial(config, trial_seed)
        except TrainingError:
            failures += 1
            result = TrialResult(config=config, dev_metric=float("nan"), test_metric=None,
                                 epochs_run=0, wall_time=0.0, seed=trial_seed)
        results.append(result)
    if log_path is not None:
        write_trial_log(results, log_path)
    if failures == budget:
        raise SearchError(f"all {budget} trials failed")
    best = max((r for r in results if np.isfinite(r.dev_metric)), key=lambda r: r.dev_metric)
    return best, results


def write_trial_log(results, path) -> None:
    """Trial log CSV: one row per trial with config, metrics and timing."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_id", "seed", *CONFIG_FIELDS, "dev_metric", "test_metric", "epochs", "seconds"])
        for trial_id, r in enumerate(results):
            writer.writerow([
                trial_id,
                r.seed,
                *[r.config.get(name, "") for name in CONFIG_FIELDS],
                "" if not np.isfinite(r.dev_metric) else repr(r.dev_metric),
                "" if r.test_metric is None else repr(r.test_metric),
                r.epochs_run,
                f"{r.wall_time:.3f}",
            ])
