"""Classification accuracy and the character n-gram F-score.

The n-gram score extracts character n-grams of orders 1..max_order
(whitespace removed by default), computes clipped-count precision and
recall per order, combines them with an F-beta (beta = 2 by default,
favouring recall), skips orders where the reference has no n-grams, and
averages the per-order F values, scaled to 0..100. The corpus variant
pools counts across segment pairs before computing the per-order scores,
which is not the same as averaging per-segment scores.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = ["ChrfParams", "accuracy", "chrf", "corpus_chrf"]

_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class ChrfParams:
    max_order: int = 6
    beta: float = 2.0
    whitespace_removed: bool = True

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError(f"max_order must be >= 1, got {self.max_order}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def accuracy(predictions: Sequence, labels: Sequence) -> float:
    """Fraction of exact matches between two equal-length label sequences."""
    if len(predictions) == 0:
        raise ValueError("accuracy of an empty sequence is undefined")
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    correct = sum(1 for p, l in zip(predictions, labels) if p == l)
    return correct / len(predictions)


def _ngram_counts(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def _pair_statistics(hypothesis: str, reference: str, params: ChrfParams) -> list[tuple[int, int, int]]:
    """Per order: (hypothesis n-gram count, reference n-gram count, clipped matches)."""
    if params.whitespace_removed:
        hypothesis = _WS_RE.sub("", hypothesis)
        reference = _WS_RE.sub("", reference)
    if not reference:
        raise ValueError("reference is empty (after whitespace removal)")
    stats = []
    for n in range(1, params.max_order + 1):
        hyp = _ngram_counts(hypothesis, n)
        ref = _ngram_counts(reference, n)
        matches = sum((hyp & ref).values())
        stats.append((sum(hyp.values()), sum(ref.values()), matches))
    return stats


def _score(stats: list[tuple[int, int, int]], beta: float) -> float:
    beta_sq = beta * beta
    f_values = []
    for hyp_total, ref_total, matches in stats:
        if ref_total == 0:
            continue  # order beyond the reference length: skipped, not zero
        precision = matches / hyp_total if hyp_total > 0 else 0.0
        recall = matches / ref_total
        denom = beta_sq * precision + recall
        f_values.append((1 + beta_sq) * precision * recall / denom if denom > 0 else 0.0)
    return 100.0 * sum(f_values) / len(f_values)


def chrf(hypothesis: str, reference: str, params: ChrfParams = ChrfParams()) -> float:
    """Segment-level score in [0, 100]; 100 iff the n-gram profiles match."""
    return _score(_pair_statistics(hypothesis, reference, params), params.beta)


def corpus_chrf(pairs: Iterable[tuple[str, str]], params: ChrfParams = ChrfParams()) -> float:
    """Corpus-level score: counts pooled across (hypothesis, reference) pairs."""
    totals = [[0, 0, 0] for _ in range(params.max_order)]
    n_pairs = 0
    for hypothesis, reference in pairs:
        for i, stat in enumerate(_pair_statistics(hypothesis, reference, params)):
            for j in range(3):
                totals[i][j] += stat[j]
        n_pairs += 1
    if n_pairs == 0:
        raise ValueError("corpus score of zero segment pairs is undefined")
    return _score([tuple(t) for t in totals], params.beta)
