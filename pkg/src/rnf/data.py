"""Data loading: sentiment treebanks, embeddings, QA candidates, checkpoints.

All loaders are pure functions of file contents.  The checkpoint
container is a length-prefixed binary format documented at
``save_checkpoint``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

MIN_LABEL, MAX_LABEL = 0, 4


class TreeParseError(ValueError):
    """Malformed treebank s-expression; message carries the byte offset."""


class EmbeddingFormatError(ValueError):
    """Malformed embedding file; message carries the line number."""


class QaFormatError(ValueError):
    """Malformed QA TSV file; message carries the line number."""


class CheckpointError(ValueError):
    """Unreadable or mismatched checkpoint; message names the failing field."""


@dataclass
class LabeledTree:
    """Binary constituent tree with one sentiment label per node.

    ``span`` is inclusive over leaf positions numbered left to right;
    leaves carry their token and have start == end.
    """

    label: int
    start: int
    end: int
    children: tuple = ()
    token: str | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()

    def tokens(self) -> list[str]:
        return [leaf.token for leaf in self.leaves()]


class _TreeReader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.next_leaf = 0

    def error(self, message: str):
        raise TreeParseError(f"{message} at byte {self.pos}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch: str):
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            self.error(f"expected {ch!r}" if self.pos < len(self.text) else f"unbalanced: expected {ch!r} before end")
        self.pos += 1

    def atom(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in "() \t\r\n":
            self.pos += 1
        if self.pos == start:
            self.error("expected a token")
        return self.text[start:self.pos]

    def node(self) -> LabeledTree:
        self.skip_ws()
        self.expect("(")
        self.skip_ws()
        label_pos = self.pos
        raw = self.atom()
        try:
            label = int(raw)
        except ValueError:
            self.pos = label_pos
            self.error(f"expected an integer label, got {raw!r}")
        if not MIN_LABEL <= label <= MAX_LABEL:
            self.pos = label_pos
            self.error(f"label {label} outside {MIN_LABEL}..{MAX_LABEL}")
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == "(":
            left = self.node()
            self.skip_ws()
            if self.pos >= len(self.text) or self.text[self.pos] != "(":
                self.error("expected a second subtree (trees are binary)")
            right = self.node()
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] not in ")":
                self.error("expected ')' (trees are binary)")
            self.expect(")")
            return LabeledTree(label=label, start=left.start, end=right.end, children=(left, right))
        token = self.atom()
        self.skip_ws()
        self.expect(")")
        index = self.next_leaf
        self.next_leaf += 1
        return LabeledTree(label=label, start=index, end=index, token=token)


def parse_tree(line: str) -> LabeledTree:
    """Parse one PTB-style s-expression like ``(3 (2 good) (2 movie))``."""
    reader = _TreeReader(line)
    tree = reader.node()
    reader.skip_ws()
    if reader.pos != len(line):
        reader.error("unbalanced: trailing input")
    return tree


def serialize_tree(tree: LabeledTree) -> str:
    if tree.is_leaf:
        return f"({tree.label} {tree.token})"
    left, right = tree.children
    return f"({tree.label} {serialize_tree(left)} {serialize_tree(right)})"


def load_treebank(path) -> list[LabeledTree]:
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trees.append(parse_tree(line))
            except TreeParseError as err:
                raise TreeParseError(f"{path} line {lineno}: {err}") from None
    return trees


def extract_phrases(tree: LabeledTree) -> list[tuple[tuple[int, int], int, int]]:
    """All constituents as (span, length, label), one entry per node."""
    phrases = []

    def visit(node):
        phrases.append((node.span, node.end - node.start + 1, node.label))
        for child in node.children:
            visit(child)

    visit(tree)
    return phrases


def binarize_label(label: int) -> int | None:
    """Collapse the 5-way scale to binary; neutral (2) maps to None."""
    if label in (0, 1):
        return 0
    if label in (3, 4):
        return 1
    return None


class Vocabulary:
    """Token-to-id map with a frozen embedding matrix.

    Ids 0 and 1 are reserved for PAD and UNK.  The PAD row is zeros and
    only ever trained through a model's padding vector; the UNK row is
    the mean of all loaded embedding rows.
    """

    PAD = 0
    UNK = 1
    PAD_TOKEN = "<pad>"
    UNK_TOKEN = "<unk>"

    def __init__(self, tokens, embeddings: np.ndarray, frozen: bool = True):
        tokens = list(tokens)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(tokens) + 2:
            raise ValueError(f"embedding matrix {embeddings.shape} does not match "
                             f"{len(tokens)} tokens plus PAD and UNK")
        self.tokens = [self.PAD_TOKEN, self.UNK_TOKEN] + tokens
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)
        self.frozen = frozen
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def token_id(self, token: str) -> int:
        return self._ids.get(token, self.UNK)

    def encode(self, tokens) -> list[int]:
        return [self._ids.get(t, self.UNK) for t in tokens]

    def hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(str(self.dim).encode())
        for token in self.tokens:
            digest.update(b"\x00")
            digest.update(token.encode("utf-8"))
        return digest.hexdigest()


def load_embeddings(path, vocab_tokens=None) -> Vocabulary:
    """Build a Vocabulary from a text embedding file (``token v1 ... vk`` per line).

    ``vocab_tokens``, when given, restricts the vocabulary to tokens that
    both appear in the file and in that collection; other tokens fall
    back to UNK at encode time.  Duplicate lines keep the first
    occurrence and emit a warning.
    """
    wanted = set(vocab_tokens) if vocab_tokens is not None else None
    tokens: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError(f"{path} line {lineno}: no embedding values")
            elif len(values) != dim:
                raise EmbeddingFormatError(f"{path} line {lineno}: expected {dim} values, got {len(values)}")
            if token in seen:
                warnings.warn(f"duplicate embedding for {token!r} at {path} line {lineno}; keeping the first")
                continue
            seen.add(token)
            if wanted is not None and token not in wanted:
                continue
            try:
                row = np.array([float(v) for v in values])
            except ValueError as err:
                raise EmbeddingFormatError(f"{path} line {lineno}: {err}") from None
            tokens.append(token)
            rows.append(row)
    if dim is None:
        raise EmbeddingFormatError(f"{path}: empty embedding file")
    matrix = np.zeros((len(tokens) + 2, dim))
    if rows:
        loaded = np.stack(rows)
        matrix[2:] = loaded
        matrix[Vocabulary.UNK] = loaded.mean(axis=0)
    return Vocabulary(tokens, matrix)


def build_vocabulary(sentences, dim: int, seed: int = 0) -> Vocabulary:
    """Random frozen embeddings for desk-scale runs without a pre-trained file."""
    rng = np.random.default_rng(seed)
    tokens = sorted({t for sentence in sentences for t in sentence})
    matrix = np.zeros((len(tokens) + 2, dim))
    matrix[2:] = rng.normal(0.0, 0.3, size=(len(tokens), dim))
    if tokens:
        matrix[Vocabulary.UNK] = matrix[2:].mean(axis=0)
    return Vocabulary(tokens, matrix)


@dataclass
class QaExample:
    """One answer candidate for a question; question_id groups candidates."""

    question_id: str
    question: list[str] = field(default_factory=list)
    answer: list[str] = field(default_factory=list)
    label: int = 0


def _tokenize(text: str) -> list[str]:
    return text.lower().split()


def load_qa_tsv(path) -> list[QaExample]:
    """Read question_id <TAB> question <TAB> answer <TAB> label rows."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            columns = line.split("\t")
            if len(columns) != 4:
                raise QaFormatError(f"{path} line {lineno}: expected 4 tab-separated columns, got {len(columns)}")
            qid, question, answer, label = columns
            if label not in ("0", "1"):
                raise QaFormatError(f"{path} line {lineno}: label must be 0 or 1, got {label!r}")
            examples.append(QaExample(question_id=qid, question=_tokenize(question),
                                      answer=_tokenize(answer), label=int(label)))
    return examples


def compute_idf(documents) -> dict[str, float]:
    """idf(t) = ln(N / (1 + df(t))) over token-list documents."""
    n = len(documents)
    df: dict[str, int] = {}
    for doc in documents:
        for token in set(doc):
            df[token] = df.get(token, 0) + 1
    return {t: math.log(n / (1 + c)) for t, c in df.items()}


# Checkpoint container: MAGIC, u32 version, u64 length-prefixed JSON
# metadata, u32 array count, then per array: u32 name length, name bytes,
# u32 ndim, u64 dims, u64 byte length, raw little-endian float64 data.
CHECKPOINT_MAGIC = b"RNFCHKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, array in params.items():
            data = np.asarray(array, dtype="<f8")
            if not data.flags["C_CONTIGUOUS"]:  # keep 0-d arrays 0-d
                data = np.ascontiguousarray(data)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            raw = data.tobytes()
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)


def _read_exact(fh, count: int, fieldname: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {fieldname}")
    return data


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic header")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic header {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata"))
        except json.JSONDecodeError as err:
            raise CheckpointError(f"corrupt metadata: {err}") from None
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "array name length"))
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"ndim of {name}"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, f"shape of {name}"))
            (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8, f"data length of {name}"))
            raw = _read_exact(fh, nbytes, f"data of {name}")
            array = np.frombuffer(raw, dtype="<f8").reshape(shape)
            params[name] = array.astype(np.float64)
        return params, meta
