"""Scikit-learn style estimators wrapping the sentence models.

``SentenceClassifier`` and ``SentenceMatcher`` follow the usual
conventions: constructor arguments are stored verbatim, learned state
lives in trailing-underscore attributes, and ``get_params``/
``set_params`` come from ``BaseEstimator`` so the estimators compose
with model selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import CheckpointError, Vocabulary, build_vocabulary, compute_idf, load_checkpoint, save_checkpoint
from .filters import FilterSpec
from .models import DropoutRates, SentenceClassifierNet, SentenceMatcherNet
from .training import TrainConfig, accuracy, map_mrr, train

CHECKPOINT_FORMAT = 1


def _check_token_sequences(X, what="X"):
    """Validate a list of token sequences and return it as lists of str."""
    if isinstance(X, str):
        raise ValueError(f"{what} must be a sequence of token sequences, not a single string")
    out = []
    for i, sentence in enumerate(X):
        if isinstance(sentence, str) or not hasattr(sentence, "__iter__"):
            raise ValueError(f"{what}[{i}] must be a sequence of tokens, got {type(sentence).__name__}")
        tokens = [str(t) for t in sentence]
        if not tokens:
            raise ValueError(f"{what}[{i}] is empty")
        out.append(tokens)
    return out


def _split_dev(X, y, fraction, rng):
    """Deterministic train/dev split with at least one dev example."""
    n = len(X)
    n_dev = max(1, int(round(n * fraction))) if fraction > 0 else 0
    if n_dev == 0 or n_dev >= n:
        return X, y, X, y
    order = rng.permutation(n)
    dev_idx = set(order[:n_dev].tolist())
    x_tr = [X[i] for i in range(n) if i not in dev_idx]
    y_tr = [y[i] for i in range(n) if i not in dev_idx]
    x_dev = [X[i] for i in order[:n_dev]]
    y_dev = [y[i] for i in order[:n_dev]]
    return x_tr, y_tr, x_dev, y_dev


class _FilterEstimatorMixin:
    """Shared plumbing: spec/dropout construction and checkpointing."""

    def _spec(self) -> FilterSpec:
        return FilterSpec(kind=self.filter_kind, window=self.window,
                          feature_maps=self.feature_maps, activation=self.activation)

    def _dropout(self) -> DropoutRates:
        return DropoutRates(embedding=self.dropout_embedding, pooling=self.dropout_pooling,
                            rnn_input=self.dropout_rnn_input, rnn_recurrent=self.dropout_rnn_recurrent)

    def _vocabulary_for(self, sentences) -> Vocabulary:
        if self.vocabulary is not None:
            return self.vocabulary
        return build_vocabulary(sentences, dim=self.embed_dim, seed=self.seed)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           plan=self.plan, threads=self.threads, seed=self.seed)

    def _require_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(f"this {type(self).__name__} is not fitted yet; call fit first")

    def feature_map(self, tokens):
        """Eval-mode feature map of one sentence (for analysis and inspection)."""
        self._require_fitted()
        return self._primary_encoder().feature_map([str(t) for t in tokens])

    def encode(self, tokens) -> np.ndarray:
        """Eval-mode pooled sentence vector."""
        self._require_fitted()
        v, _, _ = self._primary_encoder().encode([str(t) for t in tokens])
        return v.data.copy()

    def _checkpoint_meta(self) -> dict:
        params = {k: sorted(v) if isinstance(v, (set, frozenset)) else v
                  for k, v in self.get_params().items() if k != "vocabulary"}
        return {
            "format": CHECKPOINT_FORMAT,
            "estimator": type(self).__name__,
            "task": self._TASK,
            "filter_spec": {"kind": self.filter_kind, "window": self.window,
                            "feature_maps": self.feature_maps, "activation": self.activation},
            "estimator_params": params,
            "vocab_hash": self.vocabulary_.hash(),
            "vocab_tokens": self.vocabulary_.tokens[2:],
        }

    def save(self, path) -> None:
        """Checkpoint the fitted model (parameters, configuration, vocabulary)."""
        self._require_fitted()
        meta = self._checkpoint_meta()
        meta.update(self._extra_meta())
        arrays = {f"param.{name}": p.data for name, p in self.net_.named_parameters().items()}
        arrays["vocabulary.embeddings"] = self.vocabulary_.embeddings
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path, vocabulary: Vocabulary | None = None):
        """Rebuild a fitted estimator from a checkpoint.

        When ``vocabulary`` is given its hash must match the one recorded
        at save time; otherwise the stored vocabulary is used.
        """
        arrays, meta = load_checkpoint(path)
        if meta.get("estimator") != cls.__name__:
            raise CheckpointError(f"checkpoint holds a {meta.get('estimator')!r}, not a {cls.__name__}")
        if vocabulary is None:
            vocabulary = Vocabulary(meta["vocab_tokens"], arrays["vocabulary.embeddings"])
        if vocabulary.hash() != meta["vocab_hash"]:
            raise CheckpointError(f"vocabulary hash mismatch: checkpoint has {meta['vocab_hash'][:12]}..., "
                                  f"supplied vocabulary hashes to {vocabulary.hash()[:12]}...")
        est = cls(**meta["estimator_params"])
        est.vocabulary = vocabulary
        est._restore(arrays, meta, vocabulary)
        stored = {name[len("param."):]: arr for name, arr in arrays.items() if name.startswith("param.")}
        live = est.net_.named_parameters()
        if set(stored) != set(live):
            raise CheckpointError(f"parameter names differ: missing {sorted(set(live) - set(stored))[:3]}")
        for name, arr in stored.items():
            if live[name].data.shape != arr.shape:
                raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {live[name].data.shape}")
            live[name].data = arr.copy()
        return est


class SentenceClassifier(_FilterEstimatorMixin, ClassifierMixin, BaseEstimator):
    """Sentence classifier: convolution filter encoder + softmax head.

    X is a sequence of token sequences; y holds arbitrary hashable
    labels.  Word vectors stay frozen during training; only the filter,
    head and padding vector learn.
    """

    _TASK = "classification"

    def __init__(self, filter_kind="rnf-lstm", window=5, feature_maps=100, activation="relu",
                 dropout_embedding=0.0, dropout_pooling=0.0, dropout_rnn_input=0.0,
                 dropout_rnn_recurrent=0.0, learning_rate=1e-3, batch_size=32,
                 max_epochs=100, patience=5, pad_short=True, vocabulary=None, embed_dim=50,
                 validation_fraction=0.1, plan="auto", threads=1, seed=0):
        self.filter_kind = filter_kind
        self.window = window
        self.feature_maps = feature_maps
        self.activation = activation
        self.dropout_embedding = dropout_embedding
        self.dropout_pooling = dropout_pooling
        self.dropout_rnn_input = dropout_rnn_input
        self.dropout_rnn_recurrent = dropout_rnn_recurrent
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.pad_short = pad_short
        self.vocabulary = vocabulary
        self.embed_dim = embed_dim
        self.validation_fraction = validation_fraction
        self.plan = plan
        self.threads = threads
        self.seed = seed

    def _primary_encoder(self):
        return self.net_.encoder

    def fit(self, X, y, x_dev=None, y_dev=None):
        X = _check_token_sequences(X)
        y = list(y)
        if len(X) != len(y):
            raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
        self.classes_ = np.array(sorted(set(y), key=str))
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        index = {label: i for i, label in enumerate(self.classes_.tolist())}
        labels = [index[label] for label in y]
        self.vocabulary_ = self._vocabulary_for(X)
        rng = np.random.default_rng(self.seed)
        self.net_ = SentenceClassifierNet(self._spec(), self.vocabulary_,
                                          num_classes=len(self.classes_), rng=rng,
                                          dropout=self._dropout(), pad_short=self.pad_short)
        if x_dev is not None:
            x_dev = _check_token_sequences(x_dev, "x_dev")
            dev_labels = [index[label] for label in y_dev]
            train_pairs = list(zip(X, labels))
            dev_pairs = list(zip(x_dev, dev_labels))
        else:
            x_tr, y_tr, x_d, y_d = _split_dev(X, labels, self.validation_fraction, rng)
            train_pairs = list(zip(x_tr, y_tr))
            dev_pairs = list(zip(x_d, y_d))
        self.trial_ = train(self.net_, train_pairs, dev_pairs, self._train_config())
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        X = _check_token_sequences(X)
        return self.net_.predict_proba(X, plan=self.plan, threads=self.threads)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def _extra_meta(self) -> dict:
        return {"classes": self.classes_.tolist()}

    def _restore(self, arrays, meta, vocabulary):
        self.classes_ = np.array(meta["classes"])
        rng = np.random.default_rng(0)
        self.vocabulary_ = vocabulary
        self.net_ = SentenceClassifierNet(self._spec(), vocabulary,
                                          num_classes=len(self.classes_), rng=rng,
                                          dropout=self._dropout(), pad_short=self.pad_short)


class SentenceMatcher(_FilterEstimatorMixin, BaseEstimator):
    """Question/answer matcher: shared encoder, bilinear score, count features.

    X is a sequence of (question_tokens, answer_tokens) pairs with binary
    labels; ``groups`` (question ids) turn scoring into MAP over
    candidate lists, otherwise accuracy of the thresholded probability
    is used.
    """

    _TASK = "matching"

    def __init__(self, filter_kind="rnf-lstm", window=5, feature_maps=100, activation="relu",
                 dropout_embedding=0.0, dropout_pooling=0.0, dropout_rnn_input=0.0,
                 dropout_rnn_recurrent=0.0, learning_rate=1e-3, batch_size=32,
                 max_epochs=100, patience=5, pad_short=True, vocabulary=None, embed_dim=50,
                 validation_fraction=0.1, share_encoder=True, stopwords=None,
                 plan="auto", threads=1, seed=0):
        self.filter_kind = filter_kind
        self.window = window
        self.feature_maps = feature_maps
        self.activation = activation
        self.dropout_embedding = dropout_embedding
        self.dropout_pooling = dropout_pooling
        self.dropout_rnn_input = dropout_rnn_input
        self.dropout_rnn_recurrent = dropout_rnn_recurrent
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.pad_short = pad_short
        self.vocabulary = vocabulary
        self.embed_dim = embed_dim
        self.validation_fraction = validation_fraction
        self.share_encoder = share_encoder
        self.stopwords = stopwords
        self.plan = plan
        self.threads = threads
        self.seed = seed

    def _primary_encoder(self):
        return self.net_.encoder_q

    @staticmethod
    def _check_pairs(X, what="X"):
        pairs = []
        for i, pair in enumerate(X):
            if len(pair) != 2:
                raise ValueError(f"{what}[{i}] must be a (question, answer) pair")
            q = [str(t) for t in pair[0]]
            a = [str(t) for t in pair[1]]
            if not q or not a:
                raise ValueError(f"{what}[{i}] has an empty side")
            pairs.append((q, a))
        return pairs

    def fit(self, X, y, groups=None, x_dev=None, y_dev=None, dev_groups=None):
        X = self._check_pairs(X)
        y = [int(label) for label in y]
        if len(X) != len(y):
            raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
        if any(label not in (0, 1) for label in y):
            raise ValueError("matcher labels must be binary")
        if groups is not None and len(groups) != len(y):
            raise ValueError(f"groups and y lengths differ: {len(groups)} vs {len(y)}")
        if dev_groups is not None and y_dev is not None and len(dev_groups) != len(y_dev):
            raise ValueError(f"dev_groups and y_dev lengths differ: {len(dev_groups)} vs {len(y_dev)}")
        self.vocabulary_ = self._vocabulary_for([q for q, _ in X] + [a for _, a in X])
        self.idf_ = compute_idf([a for _, a in X])
        rng = np.random.default_rng(self.seed)
        self.net_ = SentenceMatcherNet(self._spec(), self.vocabulary_, rng=rng,
                                       idf=self.idf_, dropout=self._dropout(), pad_short=self.pad_short,
                                       share_encoder=self.share_encoder, stopwords=self.stopwords)
        triples = [(q, a, label) for (q, a), label in zip(X, y)]
        if x_dev is not None:
            dev_pairs = self._check_pairs(x_dev, "x_dev")
            dev = [(q, a, int(label)) for (q, a), label in zip(dev_pairs, y_dev)]
            dev_eval = self._dev_eval_fn(dev, dev_groups)
            self.trial_ = train(self.net_, triples, dev, self._train_config(), dev_eval_fn=dev_eval)
        else:
            rng_split = np.random.default_rng(self.seed)
            x_tr, y_tr, x_d, y_d = _split_dev(X, list(zip(y, groups or [None] * len(y))),
                                              self.validation_fraction, rng_split)
            tr = [(q, a, label) for (q, a), (label, _) in zip(x_tr, y_tr)]
            dev = [(q, a, label) for (q, a), (label, _) in zip(x_d, y_d)]
            dev_eval = self._dev_eval_fn(dev, [g for _, g in y_d] if groups is not None else None)
            self.trial_ = train(self.net_, tr, dev, self._train_config(), dev_eval_fn=dev_eval)
        return self

    def _dev_eval_fn(self, dev, dev_groups):
        if dev_groups is None:
            def eval_accuracy(net):
                preds = [int(net.prob(q, a, plan=self.plan, threads=self.threads).item() >= 0.5)
                         for q, a, _ in dev]
                return accuracy(preds, [label for _, _, label in dev])
            return eval_accuracy

        def eval_map(net):
            grouped: dict = {}
            for (q, a, label), gid in zip(dev, dev_groups):
                p = net.prob(q, a, plan=self.plan, threads=self.threads).item()
                grouped.setdefault(gid, []).append((p, label))
            mean_ap, _ = map_mrr(list(grouped.values()))
            return mean_ap
        return eval_map

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        pairs = self._check_pairs(X)
        return np.array([self.net_.prob(q, a, plan=self.plan, threads=self.threads).item()
                         for q, a in pairs])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)

    def score(self, X, y, groups=None) -> float:
        """MAP over candidate groups when ``groups`` is given, else accuracy."""
        probs = self.predict_proba(X)
        y = [int(label) for label in y]
        if groups is None:
            return accuracy((probs >= 0.5).astype(int).tolist(), y)
        grouped: dict = {}
        for p, label, gid in zip(probs, y, groups):
            grouped.setdefault(gid, []).append((float(p), label))
        mean_ap, _ = map_mrr(list(grouped.values()))
        return mean_ap

    def map_mrr(self, examples) -> tuple[float, float]:
        """MAP and MRR over QaExample records grouped by question_id."""
        self._require_fitted()
        grouped: dict = {}
        for ex in examples:
            p = self.net_.prob(ex.question, ex.answer, plan=self.plan, threads=self.threads).item()
            grouped.setdefault(ex.question_id, []).append((p, ex.label))
        return map_mrr(list(grouped.values()))

    def _extra_meta(self) -> dict:
        return {"idf": self.idf_}

    def _restore(self, arrays, meta, vocabulary):
        self.idf_ = dict(meta["idf"])
        rng = np.random.default_rng(0)
        self.vocabulary_ = vocabulary
        self.net_ = SentenceMatcherNet(self._spec(), vocabulary, rng=rng,
                                       idf=self.idf_, dropout=self._dropout(), pad_short=self.pad_short,
                                       share_encoder=self.share_encoder, stopwords=self.stopwords)


def fit_from_qa_examples(matcher: SentenceMatcher, train_examples, dev_examples=None):
    """Fit a matcher directly from QaExample lists, grouping by question_id."""
    X = [(ex.question, ex.answer) for ex in train_examples]
    y = [ex.label for ex in train_examples]
    groups = [ex.question_id for ex in train_examples]
    if dev_examples is not None:
        x_dev = [(ex.question, ex.answer) for ex in dev_examples]
        y_dev = [ex.label for ex in dev_examples]
        dev_groups = [ex.question_id for ex in dev_examples]
        return matcher.fit(X, y, groups=groups, x_dev=x_dev, y_dev=y_dev, dev_groups=dev_groups)
    return matcher.fit(X, y, groups=groups)
