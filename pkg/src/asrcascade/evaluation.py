"""End-to-end policy evaluation: mean WER, total MACs, decision accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import metrics
from .corpus import Corpus
from .costmodel import MacReport, ModelCostConfig, pipeline_macs
from .errors import CapabilityError, CascadeError
from .routing import EvalResources, RoutingPolicy, apply_policy, policy_scores
from .training import route_labels


@dataclass
class EvalRow:
    utt_id: str
    model_id: str
    wer: float
    macs: int
    label: Optional[int]
    score: Optional[float]


@dataclass
class EvalReport:
    policy: dict
    accounting: str
    mean_wer: float
    total_macs: int
    decision_accuracy: Optional[float]
    rows: list[EvalRow]
    mac_report: MacReport

    def to_json_dict(self) -> dict:
        return {
            "policy": self.policy,
            "accounting": self.accounting,
            "mean_wer": self.mean_wer,
            "total_macs": self.total_macs,
            "decision_accuracy": self.decision_accuracy,
            "rows": [
                {
                    "utt_id": r.utt_id,
                    "model": r.model_id,
                    "wer": r.wer,
                    "macs": r.macs,
                    "label": r.label,
                    "score": r.score,
                }
                for r in self.rows
            ],
        }


def default_accounting(policy: RoutingPolicy) -> str:
    """Cost accounting implied by a policy's decision signal.

    The decider pays the expensive encoder plus its own network everywhere;
    the entropy baseline pays a cheap greedy decode everywhere; the
    remaining policies either decide for free (oracles, fixed) or consume
    externally computed scalars (SNR, accent), so only the assigned model's
    pipeline is charged.
    """
    if policy.kind == "decider":
        return "decider"
    if policy.kind == "threshold" and policy.score_name == "entropy_mean":
        return "entropy"
    return "plain"


def evaluate(
    corpus: Corpus,
    policy: RoutingPolicy,
    cheap_cfg: ModelCostConfig,
    expensive_cfg: ModelCostConfig,
    resources: Optional[EvalResources] = None,
    accounting: Optional[str] = None,
) -> EvalReport:
    """Route the corpus under ``policy`` and summarize WER, MACs and accuracy.

    Per-row WER is the assigned model's sentence WER; the summary is the
    arithmetic mean over rows (sorted by utt_id). Decision accuracy against
    the routing labels is reported whenever both models' hypotheses exist.
    """
    if resources is None:
        resources = EvalResources(cheap_id=cheap_cfg.model_id, expensive_id=expensive_cfg.model_id)
    if resources.cheap_id != cheap_cfg.model_id or resources.expensive_id != expensive_cfg.model_id:
        raise CascadeError("resources and cost configs disagree on model ids")

    scores = policy_scores(policy, corpus, resources)
    assignment = apply_policy(policy, corpus, resources, scores=scores)
    if accounting is None:
        accounting = default_accounting(policy)
    decider_cfg = None
    if accounting == "decider":
        if resources.decider_model is None:
            raise CascadeError("decider accounting requires a loaded decider model")
        decider_cfg = resources.decider_model.config
    mac_report = pipeline_macs(
        corpus, assignment, cheap_cfg, expensive_cfg,
        decider_cfg=decider_cfg, accounting=accounting,
    )
    macs_by_utt = {utt_id: enc + dec + dcd for utt_id, enc, dec, dcd in mac_report.rows}

    try:
        labels = route_labels(corpus, resources.cheap_id, resources.expensive_id)
    except CapabilityError:
        labels = None

    rows = []
    for rec in sorted(corpus.records, key=lambda r: r.utt_id):
        model_id = assignment[rec.utt_id]
        hyp = rec.model_outputs.get(model_id)
        if hyp is None:
            raise CapabilityError(
                f"utterance {rec.utt_id!r} has no hypothesis for assigned model {model_id!r}"
            )
        rows.append(
            EvalRow(
                utt_id=rec.utt_id,
                model_id=model_id,
                wer=metrics.wer(rec.ref_text, hyp.hyp_text).wer,
                macs=macs_by_utt[rec.utt_id],
                label=None if labels is None else labels[rec.utt_id],
                score=None if scores is None else scores[rec.utt_id],
            )
        )

    mean_wer = sum(r.wer for r in rows) / len(rows)
    accuracy = None
    if labels is not None:
        predicted = [1 if r.model_id == resources.expensive_id else 0 for r in rows]
        accuracy = metrics.decision_accuracy(predicted, [r.label for r in rows])

    return EvalReport(
        policy=policy.describe(),
        accounting=accounting,
        mean_wer=mean_wer,
        total_macs=mac_report.total_macs,
        decision_accuracy=accuracy,
        rows=rows,
        mac_report=mac_report,
    )
