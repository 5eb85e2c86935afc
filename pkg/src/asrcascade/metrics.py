"""Sentence-level WER, routing labels and summary statistics.

All functions here are pure and operate on plain Python values, so they are
safe for unrestricted parallel use.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .errors import CascadeError

if TYPE_CHECKING:
    from .corpus import Corpus

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*")


@dataclass(frozen=True)
class WerBreakdown:
    """Edit operation counts and the resulting word error rate.

    ``wer`` is (S+I+D)/ref_len and is deliberately not clipped at 1.0: a
    hypothesis with enough insertions scores above 1, and collapsing those
    values would merge distinct outcomes.
    """

    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation except intra-word apostrophes, split on whitespace.

    "The cat, sat." -> [the, cat, sat]; "don't stop" -> [don't, stop].
    Apostrophes at token edges count as punctuation and are dropped.
    """
    return _TOKEN_RE.findall(text.lower())


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """Minimal-cost token alignment counts (substitutions, insertions, deletions).

    Unit costs. The backtrace breaks ties preferring substitution, then
    deletion, then insertion; the total distance is unaffected, the fixed
    order only makes the per-type counts deterministic.
    """
    if len(ref) == 0:
        raise CascadeError("edit_distance requires a non-empty reference")
    m, n = len(ref), len(hyp)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dp[i][0] = i
    for j in range(n + 1):
        dp[0][j] = j
    for i in range(1, m + 1):
        row, prev = dp[i], dp[i - 1]
        ri = ref[i - 1]
        for j in range(1, n + 1):
            row[j] = min(
                prev[j - 1] + (ri != hyp[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )
    subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, ins, dels


def wer(ref_text: str, hyp_text: str) -> WerBreakdown:
    """Word error rate between a reference and a hypothesis transcript.

    The reference must tokenize to at least one token; an empty hypothesis
    scores as all deletions (wer = 1.0).
    """
    ref = tokenize(ref_text)
    if not ref:
        raise CascadeError(f"reference tokenizes to nothing: {ref_text!r}")
    hyp = tokenize(hyp_text)
    s, i, d = edit_distance(ref, hyp)
    return WerBreakdown(substitutions=s, insertions=i, deletions=d, ref_len=len(ref))


def route_label(wer_cheap: float, wer_expensive: float) -> int:
    """1 iff the expensive model is strictly better, else 0.

    Ties keep the cheap model: the routing target only flips when the cheap
    model's WER strictly exceeds the expensive model's.
    """
    if wer_cheap < 0 or wer_expensive < 0:
        raise CascadeError("WER values must be non-negative")
    return 1 if wer_cheap > wer_expensive else 0


def decision_accuracy(predicted: Sequence[int], labels: Sequence[int]) -> float:
    """Percentage of positions where predicted equals labels."""
    if len(predicted) != len(labels):
        raise CascadeError(
            f"length mismatch: {len(predicted)} predictions vs {len(labels)} labels"
        )
    if not labels:
        raise CascadeError("decision_accuracy requires at least one sample")
    matches = sum(1 for p, y in zip(predicted, labels) if p == y)
    return 100.0 * matches / len(labels)


def relative_perf_matrix(corpus: "Corpus", models: Sequence[str]) -> list[list[float]]:
    """Pairwise model comparison over a corpus.

    Cell (i, j) is the percentage of utterances where model i's sentence WER
    is less than or equal to model j's. The diagonal is 100 by construction;
    ties count for both orderings, so cell(i,j) + cell(j,i) >= 100.
    """
    if not corpus.records:
        raise CascadeError("relative_perf_matrix requires a non-empty corpus")
    wers: dict[str, list[float]] = {m: [] for m in models}
    for rec in corpus.records:
        for m in models:
            hyp = rec.model_outputs.get(m)
            if hyp is None:
                raise CascadeError(f"utterance {rec.utt_id!r} has no hypothesis for model {m!r}")
            wers[m].append(wer(rec.ref_text, hyp.hyp_text).wer)
    n = len(corpus.records)
    matrix = []
    for mi in models:
        row = []
        for mj in models:
            wins = sum(1 for a, b in zip(wers[mi], wers[mj]) if a <= b)
            row.append(100.0 * wins / n)
        matrix.append(row)
    return matrix


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation coefficient."""
    if len(xs) != len(ys):
        raise CascadeError("pearson requires equal-length inputs")
    n = len(xs)
    if n < 2:
        raise CascadeError("pearson requires at least two points")
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise CascadeError("pearson is undefined for zero-variance input")
    return sxy / math.sqrt(sxx * syy)


def average_ranks(xs: Sequence[float]) -> list[float]:
    """Fractional ranks (1-based); tied values share the mean of their rank range."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation: pearson applied to average-ranked data."""
    return pearson(average_ranks(xs), average_ranks(ys))
