"""Sliding-window convolution filters and max-over-time pooling.

Two filter families share one contract: a linear filter bank applies an
affine map plus nonlinearity to the concatenated word vectors of each
window, while a recurrent filter runs an LSTM/GRU cell over the window's
words from a zero state and emits the final hidden state as the window's
feature vector.  Either way the result is a FeatureMap with one column
per window, which max-over-time pooling reduces to a sentence vector.

Windows are mutually independent, so two execution plans exist:

* ``batched``: all windows advance together through vectorized tensor
  ops on the caller's tape.
* ``windowed``: each window runs as an isolated forward pass on its own
  tape, optionally across worker threads; parameter gradients are merged
  by summation in window order during backward.

The default plan ``auto`` picks ``batched`` at one thread and
``windowed`` otherwise.

Both plans agree elementwise to ~1e-15; the windowed plan is what the
throughput benchmark sweeps over worker counts.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .cells import GruCell, LstmCell, uniform_init

FILTER_KINDS = ("linear", "rnf-gru", "rnf-lstm")
_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


class SentenceTooShortError(ValueError):
    """Sentence has fewer tokens than the filter window."""


@dataclass(frozen=True)
class FilterSpec:
    """Filter family plus window width and feature-map count."""

    kind: str
    window: int
    feature_maps: int
    activation: str = "relu"  # linear filters only

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {FILTER_KINDS}")
        if self.window < 1:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.feature_maps < 1:
            raise ValueError(f"feature_maps must be positive, got {self.feature_maps}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(_ACTIVATIONS)}")


@dataclass
class FeatureMap:
    """Per-window features: values column i is the feature vector of window i."""

    values: Tensor  # (feature_maps, n - m + 1)
    window_spans: list = field(default_factory=list)  # inclusive (start, end) token indices

    @property
    def num_windows(self) -> int:
        return self.values.data.shape[1]


class LinearFilterBank:
    """All d linear filters stored jointly: weight row j is filter j."""

    def __init__(self, window: int, input_size: int, feature_maps: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.window = window
        self.input_size = input_size
        self.feature_maps = feature_maps
        self.w = Tensor(uniform_init(rng, (feature_maps, window * input_size)), requires_grad=True)
        self.b = Tensor(np.zeros(feature_maps), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


def sliding_spans(n: int, m: int) -> list[tuple[int, int]]:
    return [(i, i + m - 1) for i in range(n - m + 1)]


def _resolve_plan(plan: str, threads: int) -> str:
    if plan == "auto":
        return "batched" if threads <= 1 else "windowed"
    if plan in ("batched", "windowed"):
        return plan
    raise ValueError(f"unknown execution plan {plan!r}; expected 'auto', 'batched' or 'windowed'")


def _check_sentence(sentence: Tensor, m: int) -> int:
    if sentence.data.ndim != 2:
        raise DimensionError(f"expected an (n, k) sentence matrix, got shape {sentence.data.shape}")
    n = sentence.data.shape[0]
    if n < m:
        raise SentenceTooShortError(f"sentence of {n} tokens is shorter than the window width {m}")
    return n


def _tile(mask: np.ndarray | None, rows: int) -> np.ndarray | None:
    return None if mask is None else np.tile(mask, (rows, 1))


def _windowed_features(window_fn, num_windows: int, sentence: Tensor, threads: int) -> Tensor:
    """Evaluate each window on an isolated tape and merge the columns.

    ``window_fn(i)`` must build window i's forward pass from leaf copies
    of the sentence rows it consumes and return (column tensor, list of
    (row index, leaf)).  Backward replays the per-window tapes in window
    order, so parameter gradients accumulate deterministically.
    """

    def run_one(i: int):
        with ad.Tape() as tape:
            column, row_leaves = window_fn(i)
        return tape, column, row_leaves

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            jobs = list(pool.map(run_one, range(num_windows)))
    else:
        jobs = [run_one(i) for i in range(num_windows)]

    values = np.stack([col.data for _, col, _ in jobs], axis=1)
    out = Tensor(values, requires_grad=any(col.requires_grad for _, col, _ in jobs))

    def rule(g):
        for i, (tape, column, row_leaves) in enumerate(jobs):
            column.grad = g[:, i].copy()
            for t, r in reversed(tape.nodes):
                if t.grad is not None:
                    r(t.grad)
            if sentence.requires_grad:
                if sentence.grad is None:
                    sentence.grad = np.zeros_like(sentence.data)
                for j, leaf in row_leaves:
                    if leaf.grad is not None:
                        sentence.grad[j] += leaf.grad

    ad._record(out, rule)
    return out


def linear_filter_forward(
    bank: LinearFilterBank,
    sentence: Tensor,
    spec: FilterSpec,
    plan: str = "auto",
    threads: int = 1,
) -> FeatureMap:
    """Feature map column i = f(W concat(x_i..x_{i+m-1}) + b)."""
    m = spec.window
    n = _check_sentence(sentence, m)
    if bank.window != m or bank.feature_maps != spec.feature_maps:
        raise DimensionError(f"filter bank ({bank.window}, {bank.feature_maps}) does not match "
                             f"spec ({m}, {spec.feature_maps})")
    if sentence.data.shape[1] != bank.input_size:
        raise DimensionError(f"sentence width {sentence.data.shape[1]} != bank input size {bank.input_size}")
    activation = _ACTIVATIONS[spec.activation]
    w = n - m + 1
    plan = _resolve_plan(plan, threads)

    if plan == "batched":
        windows = ad.concat([ad.slice_rows(sentence, t, t + w) for t in range(m)], axis=1)  # (w, m*k)
        z = ad.matmul(windows, ad.transpose(bank.w)) + ad.broadcast_rows(bank.b, w)
        values = ad.transpose(activation(z))
    else:

        def window_fn(i: int):
            leaves = [(i + t, Tensor(sentence.data[i + t], requires_grad=sentence.requires_grad))
                      for t in range(m)]
            xcat = ad.concat([leaf for _, leaf in leaves])
            col = activation(ad.matmul(bank.w, xcat) + bank.b)
            return col, leaves

        values = _windowed_features(window_fn, w, sentence, threads)
    return FeatureMap(values=values, window_spans=sliding_spans(n, m))


def rnf_forward(
    cell,
    sentence: Tensor,
    spec: FilterSpec,
    plan: str = "auto",
    threads: int = 1,
    input_mask: np.ndarray | None = None,
    recurrent_mask: np.ndarray | None = None,
) -> FeatureMap:
    """Run the cell over every window from a zero state; column i is the last hidden state.

    Masks, when given, are per-sentence dropout masks shared across all
    windows and steps (variational dropout on the cell's input and
    recurrent connections).
    """
    if not isinstance(cell, (LstmCell, GruCell)):
        raise TypeError(f"rnf_forward needs an LstmCell or GruCell, got {type(cell).__name__}")
    m = spec.window
    n = _check_sentence(sentence, m)
    if cell.hidden_size != spec.feature_maps:
        raise DimensionError(f"cell hidden size {cell.hidden_size} != feature_maps {spec.feature_maps}")
    if sentence.data.shape[1] != cell.input_size:
        raise DimensionError(f"sentence width {sentence.data.shape[1]} != cell input size {cell.input_size}")
    w = n - m + 1
    plan = _resolve_plan(plan, threads)

    if plan == "batched":
        state = cell.initial_state(batch=w)
        im = _tile(input_mask, w)
        rm = _tile(recurrent_mask, w)
        for t in range(m):
            x_t = ad.slice_rows(sentence, t, t + w)
            state = cell.advance(state, x_t, im, rm)
        values = ad.transpose(cell.state_output(state))
    else:

        def window_fn(i: int):
            leaves = [(i + t, Tensor(sentence.data[i + t], requires_grad=sentence.requires_grad))
                      for t in range(m)]
            state = cell.initial_state()
            for _, leaf in leaves:
                state = cell.advance(state, leaf, input_mask, recurrent_mask)
            return cell.state_output(state), leaves

        values = _windowed_features(window_fn, w, sentence, threads)
    return FeatureMap(values=values, window_spans=sliding_spans(n, m))


def encode_sentence(fmap: FeatureMap) -> tuple[Tensor, list[int]]:
    """Max-over-time pooling: per-feature max across windows, plus argmax windows."""
    if fmap.values.data.ndim != 2 or fmap.num_windows < 1:
        raise ValueError("encode_sentence: feature map must have at least one window column")
    v, indices = ad.max_over_axis(fmap.values, axis=1)
    return v, [int(i) for i in indices]


def detect_window(fmap: FeatureMap, v: Tensor) -> int:
    """Window whose feature column is nearest to v in Euclidean distance (lowest index on ties)."""
    cols = fmap.values.data
    if cols.ndim != 2 or cols.shape[1] < 1:
        raise ValueError("detect_window: feature map must have at least one window column")
    vec = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if vec.shape != (cols.shape[0],):
        raise DimensionError(f"detect_window: vector shape {vec.shape} != feature dimension {cols.shape[0]}")
    deltas = cols - vec[:, None]
    return int(np.argmin(np.einsum("ij,ij->j", deltas, deltas)))


def write_feature_map_csv(fmap: FeatureMap, path) -> None:
    """One row per window: window_start, window_end, then the d feature values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = fmap.values.data.shape[0]
        writer.writerow(["window_start", "window_end"] + [f"f{j}" for j in range(d)])
        for i, (start, end) in enumerate(fmap.window_spans):
            writer.writerow([start, end] + [repr(float(x)) for x in fmap.values.data[:, i]])
