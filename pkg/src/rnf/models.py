"""Downstream architectures: sentence classification and sentence matching.

Both share the same encoder: embed tokens, slide a convolution filter
(linear or recurrent) over the windows, max-pool over time.  The
classifier maps the pooled vector through a softmax layer; the matcher
scores a sentence pair with a bilinear form plus two word-overlap count
features and a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .cells import GruCell, LstmCell, dropout_mask, uniform_init
from .filters import (
    FeatureMap,
    FilterSpec,
    LinearFilterBank,
    SentenceTooShortError,
    encode_sentence,
    linear_filter_forward,
    rnf_forward,
)

PROB_CLAMP = 1e-7  # probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before log


@dataclass(frozen=True)
class DropoutRates:
    """Dropout rate per site; 0 disables dropout at that site."""

    embedding: float = 0.0
    pooling: float = 0.0
    rnn_input: float = 0.0
    rnn_recurrent: float = 0.0

    def __post_init__(self):
        for site in ("embedding", "pooling", "rnn_input", "rnn_recurrent"):
            rate = getattr(self, site)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate for {site} must be in [0, 1), got {rate}")


class SentenceEncoder:
    """Embedding lookup + convolution filter + max-over-time pooling.

    Word vectors are frozen; the padding vector is the single trainable
    embedding row, used to pad sentences shorter than the window (split
    evenly left and right, the odd slot going right).
    """

    def __init__(
        self,
        spec: FilterSpec,
        vocabulary,
        rng: np.random.Generator,
        dropout: DropoutRates | None = None,
        pad_short: bool = True,
    ):
        self.spec = spec
        self.vocabulary = vocabulary
        self.dropout = dropout if dropout is not None else DropoutRates()
        self.pad_short = pad_short
        self.pad_vector = Tensor(np.zeros(vocabulary.dim), requires_grad=True)
        if spec.kind == "linear":
            self.filter = LinearFilterBank(spec.window, vocabulary.dim, spec.feature_maps, rng)
            self.cell = None
        else:
            cls = LstmCell if spec.kind == "rnf-lstm" else GruCell
            self.cell = cls(vocabulary.dim, spec.feature_maps, rng)
            self.filter = None

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"pad_vector": self.pad_vector}
        owner = self.filter if self.filter is not None else self.cell
        for name, p in owner.named_parameters().items():
            params[f"filter.{name}"] = p
        return params

    def embed(self, tokens) -> tuple[Tensor, int]:
        """Sentence matrix for a token sequence, padded up to the window width.

        Returns the (max(n, m), k) tensor and the original token count.
        PAD positions reference the trainable padding vector so its
        gradient flows; all other rows are frozen constants.
        """
        n = len(tokens)
        if n == 0:
            raise ValueError("cannot embed an empty sentence")
        ids = self.vocabulary.encode(tokens)
        m = self.spec.window
        if n < m:
            if not self.pad_short:
                raise SentenceTooShortError(f"sentence of {n} tokens is shorter than the window width {m} "
                                            "and padding is disabled")
            total = m - n
            ids = [self.vocabulary.PAD] * (total // 2) + ids + [self.vocabulary.PAD] * (total - total // 2)
        if self.vocabulary.PAD not in ids:
            return Tensor(self.vocabulary.embeddings[ids]), n
        pad_row = ad.reshape(self.pad_vector, (1, self.vocabulary.dim))
        blocks, run = [], []
        for i in ids:
            if i == self.vocabulary.PAD:
                if run:
                    blocks.append(Tensor(self.vocabulary.embeddings[run]))
                    run = []
                blocks.append(pad_row)
            else:
                run.append(i)
        if run:
            blocks.append(Tensor(self.vocabulary.embeddings[run]))
        return ad.concat(blocks, axis=0), n

    def feature_map(
        self,
        tokens,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        plan: str = "auto",
        threads: int = 1,
    ) -> FeatureMap:
        sentence, n = self.embed(tokens)
        train = mode == "train"
        if train and rng is None:
            raise ValueError("train-mode forward needs an rng for dropout masks")
        if train and self.dropout.embedding > 0.0:
            sentence = ad.mul(sentence, Tensor(dropout_mask(sentence.shape, self.dropout.embedding, rng)))
        if self.spec.kind == "linear":
            fmap = linear_filter_forward(self.filter, sentence, self.spec, plan=plan, threads=threads)
        else:
            input_mask = recurrent_mask = None
            if train and self.dropout.rnn_input > 0.0:
                input_mask = dropout_mask((self.vocabulary.dim,), self.dropout.rnn_input, rng)
            if train and self.dropout.rnn_recurrent > 0.0:
                recurrent_mask = dropout_mask((self.spec.feature_maps,), self.dropout.rnn_recurrent, rng)
            fmap = rnf_forward(self.cell, sentence, self.spec, plan=plan, threads=threads,
                               input_mask=input_mask, recurrent_mask=recurrent_mask)
        if n < self.spec.window:
            fmap.window_spans = [(0, n - 1)]  # single padded window, spans in original token indices
        return fmap

    def encode(self, tokens, mode="eval", rng=None, plan="auto", threads=1) -> tuple[Tensor, FeatureMap, list[int]]:
        fmap = self.feature_map(tokens, mode=mode, rng=rng, plan=plan, threads=threads)
        v, argmax_windows = encode_sentence(fmap)
        if mode == "train" and self.dropout.pooling > 0.0:
            v = ad.mul(v, Tensor(dropout_mask(v.shape, self.dropout.pooling, rng)))
        return v, fmap, argmax_windows


class ClassifierHead:
    """Fully connected softmax layer over the pooled sentence vector."""

    def __init__(self, feature_maps: int, num_classes: int, rng: np.random.Generator | None = None):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        rng = rng if rng is not None else np.random.default_rng()
        self.num_classes = num_classes
        self.w_out = Tensor(uniform_init(rng, (num_classes, feature_maps)), requires_grad=True)
        self.b_out = Tensor(np.zeros(num_classes), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"w_out": self.w_out, "b_out": self.b_out}


def classify(v: Tensor, head: ClassifierHead) -> Tensor:
    """Class probability vector softmax(W v + b)."""
    if v.data.shape != (head.w_out.data.shape[1],):
        raise DimensionError(f"classify: vector shape {v.data.shape} incompatible with "
                             f"head weights {head.w_out.data.shape}")
    return ad.softmax(ad.matmul(head.w_out, v) + head.b_out)


class MatcherHead:
    """Bilinear sentence-pair score combined with two count features."""

    def __init__(self, feature_maps: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.m = Tensor(uniform_init(rng, (feature_maps, feature_maps)), requires_grad=True)
        self.w_feat = Tensor(np.zeros(2), requires_grad=True)
        self.b = Tensor(0.0, requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"m": self.m, "w_feat": self.w_feat, "b": self.b}


@dataclass(frozen=True)
class CountFeatures:
    """Word-overlap counts between a question and a candidate answer."""

    raw_overlap: int
    idf_overlap: float


def count_features(question, answer, idf, stopwords=None) -> CountFeatures:
    """Distinct-token overlap count and its IDF-weighted sum.

    Tokens missing from the idf map contribute weight 0; stopwords, when
    given, are removed from the question before matching.
    """
    q = set(question)
    if stopwords:
        q -= set(stopwords)
    overlap = q & set(answer)
    return CountFeatures(raw_overlap=len(overlap), idf_overlap=float(sum(idf.get(t, 0.0) for t in overlap)))


def match_score(v1: Tensor, v2: Tensor, feats: CountFeatures, head: MatcherHead) -> Tensor:
    """Match probability sigma(v1' M v2 + w . [raw, idf] + b)."""
    d = head.m.data.shape[0]
    if v1.data.shape != (d,) or v2.data.shape != (d,):
        raise DimensionError(f"match_score: vectors {v1.data.shape}/{v2.data.shape} incompatible with "
                             f"bilinear matrix {head.m.data.shape}")
    bilinear = ad.dot(v1, ad.matmul(head.m, v2))
    counts = ad.dot(head.w_feat, Tensor([feats.raw_overlap, feats.idf_overlap]))
    return ad.sigmoid(bilinear + counts + head.b)


def nll_loss(probs: Tensor, label: int) -> Tensor:
    """Cross-entropy against a gold class index, with clamped probability."""
    return ad.neg(ad.log(ad.clip(ad.pick(probs, label), PROB_CLAMP, 1.0 - PROB_CLAMP)))


def bce_loss(p: Tensor, label: int) -> Tensor:
    """Binary cross-entropy against a 0/1 label, with clamped probability."""
    if label not in (0, 1):
        raise ValueError(f"binary label must be 0 or 1, got {label!r}")
    p = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if label == 1:
        return ad.neg(ad.log(p))
    return ad.neg(ad.log(1.0 - p))


def _mean(losses) -> Tensor:
    return ad.add_n(losses) * (1.0 / len(losses))


class SentenceClassifierNet:
    """Encoder plus softmax head; labels are class indices 0..C-1."""

    def __init__(self, spec, vocabulary, num_classes, rng, dropout=None, pad_short=True):
        self.encoder = SentenceEncoder(spec, vocabulary, rng, dropout=dropout, pad_short=pad_short)
        self.head = ClassifierHead(spec.feature_maps, num_classes, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        params = dict(self.encoder.named_parameters())
        for name, p in self.head.named_parameters().items():
            params[f"head.{name}"] = p
        return params

    def probs(self, tokens, mode="eval", rng=None, plan="auto", threads=1) -> Tensor:
        v, _, _ = self.encoder.encode(tokens, mode=mode, rng=rng, plan=plan, threads=threads)
        return classify(v, self.head)

    def batch_loss(self, batch, mode="train", rng=None, plan="auto", threads=1) -> Tensor:
        """Mean cross-entropy over (tokens, label) pairs."""
        if not batch:
            raise ValueError("batch_loss on an empty batch")
        losses = []
        for tokens, label in batch:
            if not 0 <= label < self.head.num_classes:
                raise ValueError(f"label {label!r} out of range for {self.head.num_classes} classes "
                                 f"(example: {' '.join(tokens)[:60]!r})")
            losses.append(nll_loss(self.probs(tokens, mode=mode, rng=rng, plan=plan, threads=threads), label))
        return _mean(losses)

    def predict_proba(self, sentences, plan="auto", threads=1) -> np.ndarray:
        return np.stack([self.probs(tokens, plan=plan, threads=threads).data for tokens in sentences])

    def evaluate(self, dataset, plan="auto", threads=1) -> float:
        """Accuracy over (tokens, label) pairs."""
        if not dataset:
            raise ValueError("evaluate on an empty dataset")
        correct = sum(int(np.argmax(self.probs(t, plan=plan, threads=threads).data) == y) for t, y in dataset)
        return correct / len(dataset)


class SentenceMatcherNet:
    """Shared (by default) encoder for both sentences plus the bilinear head."""

    def __init__(self, spec, vocabulary, rng, idf, dropout=None, pad_short=True,
                 share_encoder=True, stopwords=None):
        self.encoder_q = SentenceEncoder(spec, vocabulary, rng, dropout=dropout, pad_short=pad_short)
        self.encoder_a = self.encoder_q if share_encoder else SentenceEncoder(
            spec, vocabulary, rng, dropout=dropout, pad_short=pad_short)
        self.share_encoder = share_encoder
        self.head = MatcherHead(spec.feature_maps, rng)
        self.idf = dict(idf)
        self.stopwords = frozenset(stopwords) if stopwords else None

    def named_parameters(self) -> dict[str, Tensor]:
        params = {f"encoder_q.{n}": p for n, p in self.encoder_q.named_parameters().items()}
        if not self.share_encoder:
            params.update({f"encoder_a.{n}": p for n, p in self.encoder_a.named_parameters().items()})
        for name, p in self.head.named_parameters().items():
            params[f"head.{name}"] = p
        return params

    def prob(self, question, answer, mode="eval", rng=None, plan="auto", threads=1) -> Tensor:
        v1, _, _ = self.encoder_q.encode(question, mode=mode, rng=rng, plan=plan, threads=threads)
        v2, _, _ = self.encoder_a.encode(answer, mode=mode, rng=rng, plan=plan, threads=threads)
        feats = count_features(question, answer, self.idf, self.stopwords)
        return match_score(v1, v2, feats, self.head)

    def batch_loss(self, batch, mode="train", rng=None, plan="auto", threads=1) -> Tensor:
        """Mean binary cross-entropy over (question, answer, label) triples."""
        if not batch:
            raise ValueError("batch_loss on an empty batch")
        losses = []
        for question, answer, label in batch:
            if label not in (0, 1):
                raise ValueError(f"label {label!r} is not binary (question: {' '.join(question)[:60]!r})")
            losses.append(bce_loss(self.prob(question, answer, mode=mode, rng=rng, plan=plan, threads=threads),
                                   label))
        return _mean(losses)

    def evaluate(self, dataset, plan="auto", threads=1) -> float:
        """MAP over examples grouped by question id.

        ``dataset`` holds QaExample-like records with question_id,
        question, answer and label fields.
        """
        from .training import map_mrr

        groups: dict[str, list[tuple[float, int]]] = {}
        for ex in dataset:
            p = self.prob(ex.question, ex.answer, plan=plan, threads=threads).item()
            groups.setdefault(ex.question_id, []).append((p, ex.label))
        mean_ap, _ = map_mrr(list(groups.values()))
        return mean_ap
