"""Desk-scale synthetic corpora with known ground truth.

The generator plants a decision rule in the feature tensors (the sign of a
mean shift on feature dimension 0) and constructs reference/hypothesis text
pairs whose sentence WERs are exact by construction: hypotheses differ from
the reference by a counted number of substituted or inserted tokens, so a
requested WER pair is realized exactly rather than sampled.

Everything derives from one seed through named streams; generating twice
with the same spec is byte-identical on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Corpus, load_manifest, save_features, save_logits
from .errors import CascadeError
from .rng import stream

COMMON_ACCENTS = ("american", "british", "canadian")
RARE_ACCENTS = ("indian", "scottish", "nigerian", "irish")


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    layers: int = 2
    frames: int = 64  # per-utterance frame counts vary in [frames_min, frames]
    dims: int = 8
    frames_min: Optional[int] = None  # defaults to max(8, frames // 2)
    planted_margin: float = 6.0  # decisive separation for the tiny-lr training recipe
    noise: float = 0.0  # probability a label disagrees with the planted statistic
    ref_len_range: tuple[int, int] = (6, 12)
    wer_pairs: Optional[tuple[tuple[float, float], ...]] = None  # cycled if given
    cheap_id: str = "tiny"
    expensive_id: str = "small"
    with_scores: bool = True
    with_accents: bool = True
    with_logits: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise CascadeError("n_samples must be positive")
        if min(self.layers, self.frames, self.dims) < 1:
            raise CascadeError("feature shape must be positive")
        lo, hi = self.ref_len_range
        if lo < 1 or hi < lo:
            raise CascadeError("ref_len_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.noise <= 1.0:
            raise CascadeError("noise must lie in [0, 1]")
        if self.frames_min is not None and not 1 <= self.frames_min <= self.frames:
            raise CascadeError("frames_min must lie in [1, frames]")

    @property
    def t_min(self) -> int:
        if self.frames_min is not None:
            return self.frames_min
        return min(self.frames, max(8, self.frames // 2))


def _error_count(wer_value: float, ref_len: int) -> int:
    """Edit count realizing ``wer_value`` on a length-``ref_len`` reference."""
    e = wer_value * ref_len
    if e < 0 or abs(e - round(e)) > 1e-9:
        raise CascadeError(
            f"WER {wer_value} is not representable with reference length {ref_len}"
        )
    return int(round(e))


def _make_hypothesis(ref_tokens: list[str], n_errors: int, tag: str) -> str:
    """A hypothesis at edit distance exactly ``n_errors`` from the reference.

    The first min(n, len) positions are substituted with out-of-vocabulary
    tokens; any remainder is appended as insertions. Token lengths never
    shrink, which keeps decode step counts from collapsing.
    """
    n = len(ref_tokens)
    hyp = list(ref_tokens)
    for j in range(min(n_errors, n)):
        hyp[j] = f"zz{tag}{j}"
    for j in range(max(0, n_errors - n)):
        hyp.append(f"zz{tag}x{j}")
    return " ".join(hyp)


def _pick_error_counts(label: int, ref_len: int, rng: np.random.Generator) -> tuple[int, int]:
    """(cheap, expensive) edit counts consistent with the routing label."""
    if label == 1:
        e_exp = int(rng.integers(0, max(1, ref_len // 3)))
        e_cheap = int(rng.integers(e_exp + 1, ref_len + 1))
    else:
        e_cheap = int(rng.integers(0, ref_len // 2 + 1))
        e_exp = int(rng.integers(e_cheap, ref_len + 1))
    return e_cheap, e_exp


@dataclass
class SyntheticTruth:
    """Ground truth the generator knows: labels and the planted statistic."""

    labels: dict[str, int] = field(default_factory=dict)
    planted_stat: dict[str, float] = field(default_factory=dict)


def make_synthetic_corpus(spec: SyntheticSpec, out_dir: str | Path) -> tuple[Corpus, SyntheticTruth]:
    """Write manifest + feature (+ logit) files under ``out_dir`` and load them back."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    if spec.with_logits:
        (out_dir / "logits").mkdir(parents=True, exist_ok=True)

    truth = SyntheticTruth()
    lines = []
    lo, hi = spec.ref_len_range
    for i in range(spec.n_samples):
        rng = stream(spec.seed, f"utt{i:06d}")
        utt_id = f"utt{i:06d}"

        side = 1 if rng.random() < 0.5 else -1
        flip = rng.random() < spec.noise
        ref_len = int(rng.integers(lo, hi + 1))
        frames = int(rng.integers(spec.t_min, spec.frames + 1))

        if spec.wer_pairs is not None:
            wer_cheap, wer_exp = spec.wer_pairs[i % len(spec.wer_pairs)]
            e_cheap = _error_count(wer_cheap, ref_len)
            e_exp = _error_count(wer_exp, ref_len)
            label = 1 if e_cheap > e_exp else 0
            side = 1 if label == 1 else -1  # keep features aligned with the pair
            if flip:
                side = -side
        else:
            label = int((side > 0) != flip)
            e_cheap, e_exp = _pick_error_counts(label, ref_len, rng)

        feats = rng.standard_normal((spec.layers, frames, spec.dims))
        feats[:, :, 0] += spec.planted_margin * side
        features_rel = f"features/{utt_id}.ftns"
        save_features(out_dir / features_rel, feats)

        ref_tokens = [f"word{int(rng.integers(0, 200)):03d}" for _ in range(ref_len)]
        record = {
            "utt_id": utt_id,
            "ref_text": " ".join(ref_tokens),
            "enc_frames": frames,
            "models": {
                spec.cheap_id: {"hyp": _make_hypothesis(ref_tokens, e_cheap, "c")},
                spec.expensive_id: {"hyp": _make_hypothesis(ref_tokens, e_exp, "e")},
            },
            "features_path": features_rel,
        }

        if spec.with_scores:
            # lower SNR means harder audio: separate the classes by ~6 sigma
            snr = 12.0 - 6.0 * label + float(rng.standard_normal())
            record["scores"] = {"snr": round(snr, 6)}
        if spec.with_accents:
            pool = RARE_ACCENTS if label == 1 else COMMON_ACCENTS
            if rng.random() < spec.noise:
                pool = COMMON_ACCENTS if label == 1 else RARE_ACCENTS
            record["accent"] = pool[int(rng.integers(0, len(pool)))]
        if spec.with_logits:
            steps = int(rng.integers(3, 8))
            vocab = 12
            logits = rng.standard_normal((steps, vocab))
            if label == 0:
                # confident: one dominant logit per step -> low entropy
                peaks = rng.integers(0, vocab, size=steps)
                logits[np.arange(steps), peaks] += 6.0
            logits_rel = f"logits/{utt_id}.{spec.cheap_id}.lgts"
            save_logits(out_dir / logits_rel, logits)
            record["logits_path"] = {spec.cheap_id: logits_rel}

        truth.labels[utt_id] = label
        truth.planted_stat[utt_id] = float(np.mean(feats[:, :, 0]))
        lines.append(json.dumps(record, sort_keys=True))

    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return load_manifest(manifest_path, split_name="synthetic"), truth
