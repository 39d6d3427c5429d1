"""Convolutional sentence encoders with recurrent neural filters.

A recurrent neural filter runs an LSTM or GRU over each sliding window
of word vectors and emits the final hidden state as that window's
feature vector; max-over-time pooling turns the per-window features into
a sentence vector.  The package ships the linear-filter baseline, the
sentence classification and sentence matching architectures on top, a
self-contained reverse-mode autodiff core, a training/search harness,
treebank analysis metrics and a throughput benchmark.
"""

from .autodiff import DimensionError, Tape, Tensor, backward
from .cells import DropoutSpec, GruCell, LstmCell, apply_dropout, gru_step, lstm_step, run_rnn
from .data import (
    CheckpointError,
    LabeledTree,
    QaExample,
    Vocabulary,
    build_vocabulary,
    load_embeddings,
    load_qa_tsv,
    load_treebank,
    parse_tree,
    serialize_tree,
)
from .estimators import SentenceClassifier, SentenceMatcher
from .filters import (
    FeatureMap,
    FilterSpec,
    LinearFilterBank,
    SentenceTooShortError,
    detect_window,
    encode_sentence,
    linear_filter_forward,
    rnf_forward,
)
from .models import ClassifierHead, CountFeatures, MatcherHead, classify, count_features, match_score
from .training import Adam, SearchSpace, TrainConfig, TrialResult, accuracy, map_mrr, random_search, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CheckpointError",
    "ClassifierHead",
    "CountFeatures",
    "DimensionError",
    "DropoutSpec",
    "FeatureMap",
    "FilterSpec",
    "GruCell",
    "LabeledTree",
    "LinearFilterBank",
    "LstmCell",
    "MatcherHead",
    "QaExample",
    "SearchSpace",
    "SentenceClassifier",
    "SentenceMatcher",
    "SentenceTooShortError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrialResult",
    "Vocabulary",
    "accuracy",
    "apply_dropout",
    "backward",
    "build_vocabulary",
    "classify",
    "count_features",
    "detect_window",
    "encode_sentence",
    "gru_step",
    "linear_filter_forward",
    "load_embeddings",
    "load_qa_tsv",
    "load_treebank",
    "lstm_step",
    "map_mrr",
    "match_score",
    "parse_tree",
    "random_search",
    "rnf_forward",
    "run_rnn",
    "serialize_tree",
    "train",
]
