"""Turning scores into per-utterance model assignments.

Covers the scalar baselines (SNR, accent rule, logit entropy), threshold
calibration (equal error rate and the no-false-negative topline), the
trained-decider policy and the oracle toplines.

Decision direction: a routing score orients either ``higher_means_expensive``
(decider output, entropy) or ``lower_means_expensive`` (SNR). The decider
policy routes to the expensive model when its score is at or above the
threshold, consistent with the label definition (1 = expensive needed) and
with total cost shrinking as the threshold rises.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np

from . import metrics
from .corpus import Corpus, LogitSequence, load_features, load_logits
from .errors import CapabilityError, CascadeError

if TYPE_CHECKING:
    from .costmodel import ModelCostConfig
    from .decider import DeciderModel

HIGHER_MEANS_EXPENSIVE = "higher_means_expensive"
LOWER_MEANS_EXPENSIVE = "lower_means_expensive"
ORIENTATIONS = (HIGHER_MEANS_EXPENSIVE, LOWER_MEANS_EXPENSIVE)

CHEAP_ACCENTS = frozenset({"american", "british", "canadian"})

POLICY_KINDS = (
    "fixed_cheap",
    "fixed_expensive",
    "threshold",
    "accent_rule",
    "decider",
    "oracle",
    "wer_oracle",
)


@dataclass(frozen=True)
class ScoredSample:
    utt_id: str
    score: float
    label: int
    orientation: str = HIGHER_MEANS_EXPENSIVE

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise CascadeError(f"score for {self.utt_id!r} is not finite")
        if self.orientation not in ORIENTATIONS:
            raise CascadeError(f"unknown orientation {self.orientation!r}")


@dataclass(frozen=True)
class RoutingPolicy:
    """A per-utterance assignment rule; see POLICY_KINDS for the variants."""

    kind: str
    score_name: Optional[str] = None
    h: Optional[float] = None
    orientation: str = HIGHER_MEANS_EXPENSIVE
    model_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise CascadeError(f"unknown policy kind {self.kind!r}")
        if self.kind == "threshold":
            if self.score_name is None or self.h is None:
                raise CascadeError("threshold policy needs score_name and h")
            if math.isnan(self.h):
                raise CascadeError("threshold h must not be NaN")
        if self.kind == "decider" and (self.model_path is None or self.h is None):
            raise CascadeError("decider policy needs model_path and h")
        if self.kind == "wer_oracle" and self.h is None:
            raise CascadeError("wer_oracle policy needs a threshold")
        if self.orientation not in ORIENTATIONS:
            raise CascadeError(f"unknown orientation {self.orientation!r}")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "threshold":
            out.update(score=self.score_name, h=self.h, orientation=self.orientation)
        elif self.kind == "decider":
            out.update(model_path=self.model_path, h=self.h)
        elif self.kind == "wer_oracle":
            out.update(t=self.h)
        return out

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)


def policy_from_dict(obj: Mapping) -> RoutingPolicy:
    kind = obj.get("kind")
    if kind in ("fixed_cheap", "fixed_expensive", "oracle", "accent_rule"):
        return RoutingPolicy(kind=kind)
    if kind == "threshold":
        return RoutingPolicy(
            kind=kind,
            score_name=obj["score"],
            h=float(obj["h"]),
            orientation=obj.get("orientation", HIGHER_MEANS_EXPENSIVE),
        )
    if kind == "decider":
        return RoutingPolicy(kind=kind, model_path=obj["model_path"], h=float(obj["h"]))
    if kind == "wer_oracle":
        return RoutingPolicy(kind=kind, h=float(obj["t"]))
    raise CascadeError(f"unknown policy kind {kind!r}")


def load_policy(path: str | Path) -> RoutingPolicy:
    with open(path, encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))


@dataclass
class EvalResources:
    """Ids and loaded artifacts a policy may need at application time."""

    cheap_id: str = "tiny"
    expensive_id: str = "small"
    decider_model: Optional["DeciderModel"] = None
    feature_cache: dict = field(default_factory=dict)


def entropy_from_logits(logits: LogitSequence) -> float:
    """Mean over decoding steps of the softmax entropy, in nats.

    Invariant under adding a constant to all logits within a step.
    """
    data = logits.data
    if data.shape[0] < 1:
        raise CascadeError("logit sequence has no steps")
    if not np.all(np.isfinite(data)):
        raise CascadeError("non-finite logits")
    shifted = data - data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(np.mean(-plogp.sum(axis=1)))


def accent_rule(accent_label: Optional[str]) -> str:
    """'cheap' for the common accents, 'expensive' otherwise (rare or unknown)."""
    if accent_label is None:
        raise CapabilityError("record has no accent label")
    return "cheap" if accent_label.strip().lower() in CHEAP_ACCENTS else "expensive"


def _rates_at(
    scores: Sequence[float], labels: Sequence[int], h: float, orientation: str
) -> tuple[float, float]:
    """(FPR, FNR) with positive = route-expensive = label 1."""
    fp = fn = pos = neg = 0
    for s, y in zip(scores, labels):
        if orientation == HIGHER_MEANS_EXPENSIVE:
            predicted = s >= h
        else:
            predicted = s <= h
        if y == 1:
            pos += 1
            if not predicted:
                fn += 1
        else:
            neg += 1
            if predicted:
                fp += 1
    return fp / neg, fn / pos


def calibrate_eer(samples: Sequence[ScoredSample]) -> float:
    """Equal-error-rate threshold.

    Candidates are midpoints between consecutive distinct scores plus two
    infinite sentinels; the candidate minimizing |FPR - FNR| wins. Ties are
    broken toward routing more utterances to the expensive model, which
    makes negating every score while flipping the orientation return
    exactly the negated threshold.
    """
    if not samples:
        raise CascadeError("calibrate_eer needs scored samples")
    orientation = samples[0].orientation
    if any(s.orientation != orientation for s in samples):
        raise CascadeError("mixed orientations in calibration samples")
    labels = [s.label for s in samples]
    if len(set(labels)) < 2:
        raise CascadeError("calibration needs both labels present")
    scores = [s.score for s in samples]

    distinct = sorted(set(scores))
    candidates = [-math.inf]
    candidates += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    candidates.append(math.inf)

    # evaluate in the orientation's "more expensive first" order so the
    # plain `<` tie-break prefers the more conservative threshold
    if orientation == HIGHER_MEANS_EXPENSIVE:
        ordered = candidates
    else:
        ordered = list(reversed(candidates))

    best_h = None
    best_gap = None
    for h in ordered:
        fpr, fnr = _rates_at(scores, labels, h, orientation)
        gap = abs(fpr - fnr)
        if best_gap is None or gap < best_gap:
            best_gap, best_h = gap, h
    return best_h


def calibrate_no_false_negative(
    wer_cheap: Sequence[float], labels: Sequence[int]
) -> float:
    """Largest cheap-WER cutoff that never keeps the cheap model wrongly.

    Under the rule "route cheap iff WER_cheap <= t", returns the largest t
    among the observed WER values (or -inf) such that no label-1 sample
    falls at or below it. With no label-1 samples the constraint is vacuous
    and the maximum observed WER is returned.
    """
    if len(wer_cheap) != len(labels):
        raise CascadeError("wer/label lists must align")
    if not wer_cheap:
        raise CascadeError("calibration set is empty")
    if all(y == 0 for y in labels):
        return max(wer_cheap)
    min_positive = min(w for w, y in zip(wer_cheap, labels) if y == 1)
    below = [w for w in wer_cheap if w < min_positive]
    return max(below) if below else -math.inf


def resolve_scores(
    corpus: Corpus,
    score_name: str,
    resources: EvalResources,
) -> dict[str, float]:
    """Named per-utterance scores; 'entropy_mean' falls back to logit files."""
    out = {}
    for rec in corpus.records:
        if rec.scores is not None and score_name in rec.scores:
            out[rec.utt_id] = rec.scores[score_name]
            continue
        if score_name == "entropy_mean" and rec.logits_paths:
            path = rec.logits_paths.get(resources.cheap_id)
            if path is None:
                raise CapabilityError(
                    f"utterance {rec.utt_id!r} has no logits for {resources.cheap_id!r}"
                )
            out[rec.utt_id] = entropy_from_logits(load_logits(corpus.resolve(path)))
            continue
        raise CapabilityError(f"utterance {rec.utt_id!r} lacks score {score_name!r}")
    return out


def decider_scores(corpus: Corpus, resources: EvalResources) -> dict[str, float]:
    """Run the loaded decider on every utterance's features."""
    from .decider import forward  # local import to avoid a cycle at module load

    model = resources.decider_model
    if model is None:
        raise CascadeError("decider policy requires a loaded model in resources")
    out = {}
    for rec in corpus.records:
        if rec.features_path is None:
            raise CapabilityError(f"utterance {rec.utt_id!r} has no features_path")
        key = rec.features_path
        feats = resources.feature_cache.get(key)
        if feats is None:
            feats = load_features(corpus.resolve(rec.features_path))
            resources.feature_cache[key] = feats
        out[rec.utt_id] = forward(model, feats)
    return out


def _cheap_wers(corpus: Corpus, cheap_id: str) -> dict[str, float]:
    out = {}
    for rec in corpus.records:
        hyp = rec.model_outputs.get(cheap_id)
        if hyp is None:
            raise CapabilityError(f"utterance {rec.utt_id!r} has no hypothesis for {cheap_id!r}")
        out[rec.utt_id] = metrics.wer(rec.ref_text, hyp.hyp_text).wer
    return out


def policy_scores(
    policy: RoutingPolicy, corpus: Corpus, resources: EvalResources
) -> Optional[dict[str, float]]:
    """Per-utterance scores a policy thresholds on, or None for score-free kinds."""
    if policy.kind == "threshold":
        return resolve_scores(corpus, policy.score_name, resources)
    if policy.kind == "decider":
        return decider_scores(corpus, resources)
    if policy.kind == "wer_oracle":
        return _cheap_wers(corpus, resources.cheap_id)
    return None


def apply_policy(
    policy: RoutingPolicy,
    corpus: Corpus,
    resources: EvalResources,
    scores: Optional[Mapping[str, float]] = None,
) -> dict[str, str]:
    """Assign every utterance to the cheap or expensive model id.

    ``scores`` may carry precomputed per-utterance scores for the score-based
    policy kinds; otherwise they are computed here.
    """
    from .training import route_labels  # local import to avoid a cycle

    cheap, expensive = resources.cheap_id, resources.expensive_id
    if not corpus.records:
        raise CascadeError("cannot route an empty corpus")

    if policy.kind == "fixed_cheap":
        return {rec.utt_id: cheap for rec in corpus.records}
    if policy.kind == "fixed_expensive":
        return {rec.utt_id: expensive for rec in corpus.records}
    if policy.kind == "oracle":
        labels = route_labels(corpus, cheap, expensive)
        return {u: expensive if y == 1 else cheap for u, y in labels.items()}
    if policy.kind == "accent_rule":
        out = {}
        for rec in corpus.records:
            try:
                side = accent_rule(rec.accent)
            except CapabilityError:
                raise CapabilityError(f"utterance {rec.utt_id!r} has no accent label") from None
            out[rec.utt_id] = cheap if side == "cheap" else expensive
        return out

    if scores is None:
        scores = policy_scores(policy, corpus, resources)
    if policy.kind == "wer_oracle":
        return {u: cheap if w <= policy.h else expensive for u, w in scores.items()}

    orientation = policy.orientation if policy.kind == "threshold" else HIGHER_MEANS_EXPENSIVE
    out = {}
    for utt_id, s in scores.items():
        if orientation == HIGHER_MEANS_EXPENSIVE:
            expensive_side = s >= policy.h
        else:
            expensive_side = s <= policy.h
        out[utt_id] = expensive if expensive_side else cheap
    return out


def assignment_for_scores(
    scores: Mapping[str, float],
    h: float,
    cheap_id: str,
    expensive_id: str,
    orientation: str = HIGHER_MEANS_EXPENSIVE,
) -> dict[str, str]:
    """Threshold assignment: expensive iff the score sits on h's expensive side."""
    if orientation == HIGHER_MEANS_EXPENSIVE:
        return {u: expensive_id if s >= h else cheap_id for u, s in scores.items()}
    return {u: expensive_id if s <= h else cheap_id for u, s in scores.items()}


@dataclass
class SweepRow:
    h: float
    mean_wer: float
    total_macs: int
    frac_expensive: float


def sweep_thresholds(
    scores: Mapping[str, float],
    corpus: Corpus,
    grid: Sequence[float],
    cheap_cfg: "ModelCostConfig",
    expensive_cfg: "ModelCostConfig",
    decider_cfg=None,
    accounting: str = "plain",
    orientation: str = HIGHER_MEANS_EXPENSIVE,
) -> list[SweepRow]:
    """Evaluate the threshold family over a grid, rows sorted by h.

    Each row applies "expensive iff score >= h" (or <= under the lower
    orientation) and reports the mean sentence WER of the assigned
    hypotheses, total pipeline MACs under the given accounting, and the
    routed-expensive fraction. With plain accounting, a grid spanning the
    score range reproduces the fixed-cheap and fixed-expensive evaluations
    at its endpoints.
    """
    from .costmodel import pipeline_macs  # local import to avoid a cycle

    if not grid:
        raise CascadeError("threshold grid is empty")
    missing = [r.utt_id for r in corpus.records if r.utt_id not in scores]
    if missing:
        raise CascadeError(f"no score for utterances: {missing[:3]}")

    wers = {
        (rec.utt_id, model_id): metrics.wer(rec.ref_text, hyp.hyp_text).wer
        for rec in corpus.records
        for model_id, hyp in rec.model_outputs.items()
    }
    rows = []
    for h in sorted(grid):
        assignment = assignment_for_scores(
            scores, h, cheap_cfg.model_id, expensive_cfg.model_id, orientation
        )
        report = pipeline_macs(
            corpus, assignment, cheap_cfg, expensive_cfg,
            decider_cfg=decider_cfg, accounting=accounting,
        )
        ordered = sorted(assignment.items())
        mean_wer = sum(wers[(u, m)] for u, m in ordered) / len(ordered)
        frac = sum(1 for _, m in ordered if m == expensive_cfg.model_id) / len(ordered)
        rows.append(SweepRow(h=h, mean_wer=mean_wer, total_macs=report.total_macs, frac_expensive=frac))
    return rows
