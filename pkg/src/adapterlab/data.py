"""Dataset loaders and the built-in toy synthesizer.

Sentiment and paraphrase files are header-bearing TSV; poems are plain
text separated by blank lines with an optional leading number line. The
synthesizer produces small pattern-based datasets in the same shapes, so
the entire test suite and any smoke run work without external assets.
"""

from __future__ import annotations

import re

import numpy as np

__all__ = [
    "DatasetError",
    "load_sentiment_tsv",
    "load_paraphrase_tsv",
    "load_sonnets",
    "synth_sentiment",
    "synth_paraphrase",
    "synth_sonnets",
    "write_sentiment_tsv",
    "write_paraphrase_tsv",
    "write_sonnets",
]


class DatasetError(ValueError):
    """Malformed dataset file or out-of-range label."""


_SENTIMENT_HEADER = ["id", "sentence", "label"]
_PARAPHRASE_HEADER = ["id", "question1", "question2", "is_duplicate"]
_NUMBER_LINE_RE = re.compile(r"^\s*[0-9IVXLCDMivxlcdm]+\.?\s*$")


def _read_tsv(path: str, header: list[str]) -> list[list[str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DatasetError(f"{path}: empty file, expected a header line")
    got = lines[0].split("\t")
    if got != header:
        raise DatasetError(f"{path}: expected header {header}, got {got}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} tab-separated fields, got {len(fields)}")
        rows.append(fields)
    return rows


def _parse_label(raw: str, n_classes: int, path: str, lineno: int) -> int:
    try:
        label = int(raw)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: label {raw!r} is not an integer") from None
    if not 0 <= label < n_classes:
        raise DatasetError(f"{path}:{lineno}: label {label} outside [0, {n_classes})")
    return label


def load_sentiment_tsv(path: str, n_classes: int) -> list[dict]:
    """Rows of {id, sentence, label} with labels validated against n_classes."""
    records = []
    for i, fields in enumerate(_read_tsv(path, _SENTIMENT_HEADER)):
        records.append({
            "id": fields[0],
            "sentence": fields[1],
            "label": _parse_label(fields[2], n_classes, path, i + 2),
        })
    return records


def load_paraphrase_tsv(path: str) -> list[dict]:
    """Rows of {id, question1, question2, is_duplicate} with binary labels."""
    records = []
    for i, fields in enumerate(_read_tsv(path, _PARAPHRASE_HEADER)):
        records.append({
            "id": fields[0],
            "question1": fields[1],
            "question2": fields[2],
            "is_duplicate": _parse_label(fields[3], 2, path, i + 2),
        })
    return records


def load_sonnets(path: str) -> list[str]:
    """Poems separated by blank lines; a leading number line is dropped."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    poems = []
    for chunk in re.split(r"\n\s*\n", text):
        lines = [ln.rstrip() for ln in chunk.splitlines() if ln.strip()]
        if lines and _NUMBER_LINE_RE.match(lines[0]):
            lines = lines[1:]
        if lines:
            poems.append("\n".join(lines))
    if not poems:
        raise DatasetError(f"{path}: no poems found")
    return poems


# -- synthesizer ---------------------------------------------------------------

_CLASS_WORDS = [
    ["dreadful", "awful", "horrid"],
    ["bad", "poor", "weak"],
    ["okay", "plain", "average"],
    ["good", "solid", "nice"],
    ["great", "superb", "lovely"],
]
_SUBJECTS = ["the film", "the play", "that book", "this song", "the show"]
_QUESTION_STEMS = [
    "how do i cook rice",
    "what is the capital of france",
    "why is the sky blue",
    "when was the wheel invented",
    "where do penguins live",
    "who wrote this poem",
    "how far is the moon",
    "what makes bread rise",
]
_POEM_WORDS = "sun moon tide stone rose wind leaf star rain cloud".split()


def synth_sentiment(n: int, n_classes: int = 5, seed: int = 0) -> list[dict]:
    """Pattern-based sentences whose class word determines the label."""
    if not 2 <= n_classes <= len(_CLASS_WORDS):
        raise ValueError(f"n_classes must be in [2, {len(_CLASS_WORDS)}]")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        label = i % n_classes
        word = _CLASS_WORDS[label][rng.integers(len(_CLASS_WORDS[label]))]
        subject = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        records.append({"id": f"s{i}", "sentence": f"{subject} was {word}", "label": label})
    return records


def synth_paraphrase(n: int, seed: int = 0) -> list[dict]:
    """Half duplicate pairs (identical or lightly reworded), half mismatches."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        dup = i % 2
        q1 = _QUESTION_STEMS[rng.integers(len(_QUESTION_STEMS))]
        if dup:
            q2 = q1 if rng.random() < 0.5 else q1 + " exactly"
        else:
            others = [q for q in _QUESTION_STEMS if q != q1]
            q2 = others[rng.integers(len(others))]
        records.append({"id": f"p{i}", "question1": q1, "question2": q2, "is_duplicate": dup})
    return records


def synth_sonnets(n: int, seed: int = 0, n_lines: int = 14) -> list[str]:
    """Rhyme-free pseudo-poems of short random lines."""
    rng = np.random.default_rng(seed)
    poems = []
    for _ in range(n):
        lines = []
        for _ in range(n_lines):
            k = int(rng.integers(3, 6))
            lines.append(" ".join(_POEM_WORDS[rng.integers(len(_POEM_WORDS))] for _ in range(k)))
        poems.append("\n".join(lines))
    return poems


def write_sentiment_tsv(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(_SENTIMENT_HEADER) + "\n")
        for r in records:
            fh.write(f"{r['id']}\t{r['sentence']}\t{r['label']}\n")


def write_paraphrase_tsv(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(_PARAPHRASE_HEADER) + "\n")
        for r in records:
            fh.write(f"{r['id']}\t{r['question1']}\t{r['question2']}\t{r['is_duplicate']}\n")


def write_sonnets(poems: list[str], path: str, number_lines: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, poem in enumerate(poems):
            if number_lines:
                fh.write(f"{i + 1}\n")
            fh.write(poem + "\n\n")
