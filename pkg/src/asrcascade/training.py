"""Training loop for the decision network.

Mini-batch gradient descent with Adam and a cosine-annealed learning rate,
written against the analytic backward pass in :mod:`asrcascade.decider`.
Shuffling, initialization and batching all draw from named seed streams, so
a fixed seed reproduces the run bit for bit in single-threaded execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics
from .corpus import Corpus, FeatureTensor, load_features
from .decider import (
    DeciderConfig,
    DeciderModel,
    _backward_batch,
    _forward_batch,
    bce_from_logit,
    init_model,
    pad_batch,
)
from .errors import CapabilityError, CascadeError
from .rng import stream


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-5
    total_steps: int = 1000
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise CascadeError("lr0 must be positive")
        if self.total_steps < 1 or self.batch_size < 1:
            raise CascadeError("total_steps and batch_size must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise CascadeError("Adam betas must lie in (0, 1)")


def steps_for_epochs(n_examples: int, epochs: int, batch_size: int) -> int:
    """total_steps covering ``epochs`` full passes at the given batch size."""
    return epochs * math.ceil(n_examples / batch_size)


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine-annealed rate: lr0 at step 0, 0 at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise CascadeError(f"step {step} outside [0, {cfg.total_steps}]")
    return 0.5 * cfg.lr0 * (1.0 + math.cos(math.pi * step / cfg.total_steps))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class LabeledExample:
    utt_id: str
    features: FeatureTensor
    label: int


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: DeciderModel
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")


def route_labels(corpus: Corpus, cheap_id: str, expensive_id: str) -> dict[str, int]:
    """Per-utterance routing labels from the two models' sentence WERs."""
    labels = {}
    for rec in corpus.records:
        cheap = rec.model_outputs.get(cheap_id)
        expensive = rec.model_outputs.get(expensive_id)
        if cheap is None or expensive is None:
            missing = cheap_id if cheap is None else expensive_id
            raise CapabilityError(f"utterance {rec.utt_id!r} has no hypothesis for {missing!r}")
        labels[rec.utt_id] = metrics.route_label(
            metrics.wer(rec.ref_text, cheap.hyp_text).wer,
            metrics.wer(rec.ref_text, expensive.hyp_text).wer,
        )
    return labels


def load_labeled_examples(corpus: Corpus, cheap_id: str, expensive_id: str) -> list[LabeledExample]:
    """Load every record's feature tensor and attach its routing label."""
    labels = route_labels(corpus, cheap_id, expensive_id)
    examples = []
    for rec in corpus.records:
        if rec.features_path is None:
            raise CapabilityError(f"utterance {rec.utt_id!r} has no features_path")
        feats = load_features(corpus.resolve(rec.features_path))
        examples.append(LabeledExample(rec.utt_id, feats, labels[rec.utt_id]))
    return examples


def split_examples(
    examples: Sequence[LabeledExample], val_fraction: float, seed: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Seeded train/validation split, disjoint by utterance id."""
    if not 0.0 < val_fraction < 1.0:
        raise CascadeError("val_fraction must lie in (0, 1)")
    order = stream(seed, "train-val-split").permutation(len(examples))
    n_val = max(1, int(round(val_fraction * len(examples))))
    val_idx = set(order[:n_val].tolist())
    train = [examples[i] for i in range(len(examples)) if i not in val_idx]
    val = [examples[i] for i in sorted(val_idx)]
    if not train:
        raise CascadeError("validation split consumed every example")
    return train, val


def accuracy_at_threshold(
    model: DeciderModel,
    examples: Sequence[LabeledExample],
    threshold: float = 0.5,
    batch_size: int = 64,
) -> float:
    """Percent of examples whose score >= threshold matches the label."""
    if not examples:
        raise CascadeError("empty evaluation set")
    hits = 0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        feats, mask = pad_batch(model.config, [e.features for e in chunk])
        scores, _ = _forward_batch(model, feats, mask)
        preds = (scores >= threshold).astype(int)
        hits += int(sum(p == e.label for p, e in zip(preds, chunk)))
    return 100.0 * hits / len(examples)


def train(
    train_set: Sequence[LabeledExample],
    val_set: Sequence[LabeledExample],
    dcfg: DeciderConfig,
    tcfg: TrainConfig,
) -> TrainResult:
    """Train a decider and return the best-validation-accuracy snapshot.

    Batches are padded with a frame mask; pooling and normalization divide
    by true lengths. Each epoch reshuffles with a seeded stream. History
    carries the mean train loss and validation accuracy per epoch.
    """
    if not train_set or not val_set:
        raise CascadeError("train and validation sets must be non-empty")
    overlap = {e.utt_id for e in train_set} & {e.utt_id for e in val_set}
    if overlap:
        raise CascadeError(f"train/val overlap on utt_ids: {sorted(overlap)[:3]}")

    model = init_model(dcfg)
    state = AdamState.zeros_like(model.params)
    shuffle_rng = stream(tcfg.seed, "epoch-shuffle")
    steps_per_epoch = math.ceil(len(train_set) / tcfg.batch_size)
    n_epochs = math.ceil(tcfg.total_steps / steps_per_epoch)

    result = TrainResult(model=model)
    best_params = None
    step = 0
    for epoch in range(n_epochs):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(train_set), tcfg.batch_size):
            if step >= tcfg.total_steps:
                break
            idx = order[start : start + tcfg.batch_size]
            chunk = [train_set[i] for i in idx]
            feats, mask = pad_batch(dcfg, [e.features for e in chunk])
            labels = np.array([float(e.label) for e in chunk])
            scores, cache = _forward_batch(model, feats, mask)
            z = cache[6]
            losses.append(float(np.mean(bce_from_logit(z, labels))))
            dz = (scores - labels) / len(chunk)
            grads = _backward_batch(model, cache, dz)
            lr = cosine_lr(step, tcfg)
            model.params, state = adam_step(
                model.params, grads, state, lr,
                beta1=tcfg.adam_beta1, beta2=tcfg.adam_beta2, eps=tcfg.adam_eps,
            )
            step += 1
        val_acc = accuracy_at_threshold(model, val_set)
        result.history.append(
            EpochStats(epoch=epoch, train_loss=float(np.mean(losses)), val_accuracy=val_acc)
        )
        if best_params is None or val_acc > result.best_val_accuracy:
            best_params = {k: v.copy() for k, v in model.params.items()}
            result.best_epoch = epoch
            result.best_val_accuracy = val_acc
        if step >= tcfg.total_steps:
            break

    result.model = DeciderModel(config=dcfg, params=best_params)
    return result
