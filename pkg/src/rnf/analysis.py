"""Treebank analysis: label consistency by phrase length and key-phrase hit rate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .data import binarize_label, extract_phrases
from .filters import detect_window, encode_sentence


@dataclass
class PhraseEntry:
    """One sentence's annotated constituents: label, length and span->label map."""

    label: int
    length: int
    span_labels: dict = field(default_factory=dict)

    def key_phrases(self) -> set:
        """Spans labeled the same as the whole sentence (always includes the root)."""
        return {span for span, label in self.span_labels.items() if label == self.label}


def build_phrase_index(trees, granularity: str = "fine") -> list[PhraseEntry]:
    """Per-sentence span->label maps from parsed treebank trees.

    With binary granularity, labels collapse to negative/positive,
    neutral constituents are dropped, and sentences with a neutral root
    are skipped entirely.
    """
    if granularity not in ("fine", "binary"):
        raise ValueError(f"granularity must be 'fine' or 'binary', got {granularity!r}")
    entries = []
    for tree in trees:
        length = tree.end - tree.start + 1
        if granularity == "fine":
            spans = {span: label for span, _, label in extract_phrases(tree)}
            entries.append(PhraseEntry(label=tree.label, length=length, span_labels=spans))
        else:
            root = binarize_label(tree.label)
            if root is None:
                continue
            spans = {}
            for span, _, label in extract_phrases(tree):
                collapsed = binarize_label(label)
                if collapsed is not None:
                    spans[span] = collapsed
            entries.append(PhraseEntry(label=root, length=length, span_labels=spans))
    return entries


def llc_ratio(entries, m: int) -> tuple[float | None, int]:
    """Fraction of annotated length-m constituents that carry their sentence's label.

    Returns (ratio, support); ratio is None when no constituent of that
    length is annotated (absent, not zero).
    """
    if m < 1:
        raise ValueError(f"phrase length must be positive, got {m}")
    matches = 0
    support = 0
    for entry in entries:
        for (start, end), label in entry.span_labels.items():
            if end - start + 1 != m:
                continue
            support += 1
            matches += int(label == entry.label)
    if support == 0:
        return None, 0
    return matches / support, support


def _span_hit(detected: tuple[int, int], keys: set, mode: str) -> bool:
    if mode == "exact":
        return detected in keys
    a, b = detected
    return any((a <= ks and ke <= b) or (ks <= a and b <= ke) for ks, ke in keys)


def hit_rate(encode_fn, sentences, entries, match_mode: str = "exact") -> tuple[float, int]:
    """Fraction of sentences whose detected window lies in the key phrase set.

    ``encode_fn(tokens)`` produces the eval-mode FeatureMap (e.g. a
    trained estimator's ``feature_map`` method).  The detected window is
    the feature column nearest the max-pooled vector; ``containment``
    mode also counts a detected span that contains or is contained by a
    key phrase span.
    """
    if match_mode not in ("exact", "containment"):
        raise ValueError(f"match_mode must be 'exact' or 'containment', got {match_mode!r}")
    sentences = list(sentences)
    entries = list(entries)
    if len(sentences) != len(entries):
        raise ValueError(f"{len(sentences)} sentences vs {len(entries)} phrase entries")
    if not sentences:
        raise ValueError("hit_rate over zero sentences")
    hits = 0
    for tokens, entry in zip(sentences, entries):
        fmap = encode_fn(tokens)
        v, _ = encode_sentence(fmap)
        detected = fmap.window_spans[detect_window(fmap, v)]
        hits += int(_span_hit(tuple(detected), entry.key_phrases(), match_mode))
    return hits / len(sentences), len(sentences)


REPORT_COLUMNS = ("m", "llc_ratio", "llc_support", "hit_rate_linear", "hit_rate_rnf", "sentences_evaluated")


def emit_analysis_report(rows, path, plot_path=None) -> None:
    """Write the per-length analysis CSV (and optionally a small SVG chart).

    ``rows`` is a list of dicts keyed by REPORT_COLUMNS; missing values
    stay empty rather than becoming zeros.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("emit_analysis_report needs at least one row")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in REPORT_COLUMNS])
    if plot_path is not None:
        _write_svg(rows, plot_path)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def read_analysis_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for column in REPORT_COLUMNS:
                text = raw.get(column, "")
                if text == "" or text is None:
                    row[column] = None
                elif column in ("m", "llc_support", "sentences_evaluated"):
                    row[column] = int(text)
                else:
                    row[column] = float(text)
            rows.append(row)
        return rows


_SVG_SERIES = (("llc_ratio", "#1f77b4"), ("hit_rate_linear", "#ff7f0e"), ("hit_rate_rnf", "#2ca02c"))


def _write_svg(rows, path, width=480, height=320, margin=40) -> None:
    """Minimal line chart: phrase length on x, ratios in [0, 1] on y."""
    xs = [row["m"] for row in rows]
    x_lo, x_hi = min(xs), max(xs)
    span = max(x_hi - x_lo, 1)

    def sx(x):
        return margin + (x - x_lo) / span * (width - 2 * margin)

    def sy(y):
        return height - margin - y * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>']
    for x in xs:
        parts.append(f'<text x="{sx(x):.1f}" y="{height - margin + 16:.1f}" font-size="10" '
                     f'text-anchor="middle">{x}</text>')
    for tick in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{margin - 6}" y="{sy(tick) + 3:.1f}" font-size="10" '
                     f'text-anchor="end">{tick:g}</text>')
    for name, color in _SVG_SERIES:
        points = [(row["m"], row.get(name)) for row in rows if row.get(name) is not None]
        if not points:
            continue
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in points)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
