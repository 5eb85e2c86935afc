"""On-disk corpus formats and the in-memory data model.

A corpus is a line-delimited JSON manifest plus binary side files:

* Manifest: UTF-8, one JSON object per line with keys ``utt_id``,
  ``ref_text``, ``enc_frames``, ``models`` (model_id -> {"hyp", optional
  "decode_steps"}), and optional ``scores``, ``accent``, ``features_path``,
  ``logits_path`` (model_id -> path). Unknown keys are ignored.
* Feature tensor file: bytes ``FTNS`` + version byte 1, three u32
  little-endian integers L, T, D, then L*T*D float32 little-endian values
  in [layer][frame][dim] order.
* Logit file: bytes ``LGTS`` + version byte 1, u32 little-endian steps and
  vocab size, then steps*vocab float32 little-endian values.

Loading is single-threaded per file; loaded objects are immutable and safe
to share across parallel readers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import (
    BadMagicError,
    CorpusValidationError,
    ManifestError,
    NonFiniteValueError,
    TruncatedFileError,
)
from .metrics import tokenize

FEATURE_MAGIC = b"FTNS"
LOGIT_MAGIC = b"LGTS"
FORMAT_VERSION = 1

CAPABILITIES = ("features", "logits-entropy", "snr", "accent", "decode_steps")


@dataclass(frozen=True)
class HypothesisRecord:
    """One model's transcript for one utterance."""

    hyp_text: str
    decode_steps: Optional[int] = None

    def steps(self) -> int:
        """Decode step count: the stored value, or whitespace tokens + 2.

        The default models one token per whitespace word plus begin/end
        tokens, so decode cost is always resolvable.
        """
        if self.decode_steps is not None:
            return self.decode_steps
        return len(self.hyp_text.split()) + 2


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    ref_text: str
    enc_frames: int
    model_outputs: Mapping[str, HypothesisRecord]
    scores: Optional[Mapping[str, float]] = None
    accent: Optional[str] = None
    features_path: Optional[str] = None
    logits_paths: Optional[Mapping[str, str]] = None

    def has_capability(self, capability: str) -> bool:
        if capability == "features":
            return self.features_path is not None
        if capability == "logits-entropy":
            has_score = self.scores is not None and "entropy_mean" in self.scores
            return has_score or bool(self.logits_paths)
        if capability == "snr":
            return self.scores is not None and "snr" in self.scores
        if capability == "accent":
            return self.accent is not None
        if capability == "decode_steps":
            return all(h.decode_steps is not None for h in self.model_outputs.values())
        raise CorpusValidationError(f"unknown capability {capability!r}")


@dataclass(frozen=True)
class FeatureTensor:
    """L layers x T frames x D dims of encoder activations."""

    data: np.ndarray  # float shape (L, T, D)

    @property
    def layers(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def dims(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LogitSequence:
    """Unnormalized logits per decoding step, shape (steps, vocab)."""

    data: np.ndarray

    @property
    def steps(self) -> int:
        return self.data.shape[0]

    @property
    def vocab(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Corpus:
    records: tuple[UtteranceRecord, ...]
    model_registry: tuple[str, ...]
    split_name: str
    base_dir: Optional[str] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, utt_id: str) -> UtteranceRecord:
        for rec in self.records:
            if rec.utt_id == utt_id:
                return rec
        raise KeyError(utt_id)

    def resolve(self, relpath: str) -> Path:
        """Resolve a manifest-relative side-file path."""
        p = Path(relpath)
        if p.is_absolute() or self.base_dir is None:
            return p
        return Path(self.base_dir) / p


@dataclass
class ValidationReport:
    """Per-capability lists of records that lack it, plus an overall verdict."""

    missing: dict[str, list[str]]
    required: tuple[str, ...]

    def ok(self, capability: str) -> bool:
        return not self.missing[capability]

    @property
    def passed(self) -> bool:
        return all(not self.missing[cap] for cap in self.required)


def _parse_record(obj: dict, line_no: int) -> UtteranceRecord:
    try:
        utt_id = obj["utt_id"]
        ref_text = obj["ref_text"]
        enc_frames = obj["enc_frames"]
        models = obj["models"]
    except KeyError as exc:
        raise ManifestError(f"missing required key {exc.args[0]!r}", line_no) from None
    if not isinstance(utt_id, str) or not utt_id:
        raise ManifestError("utt_id must be a non-empty string", line_no)
    if not isinstance(ref_text, str):
        raise ManifestError(f"{utt_id}: ref_text must be a string", line_no)
    if not isinstance(enc_frames, int) or isinstance(enc_frames, bool) or enc_frames < 1:
        raise ManifestError(f"{utt_id}: enc_frames must be a positive integer", line_no)
    if not isinstance(models, dict):
        raise ManifestError(f"{utt_id}: models must be an object", line_no)

    outputs = {}
    for model_id, entry in models.items():
        if not isinstance(entry, dict) or "hyp" not in entry or not isinstance(entry["hyp"], str):
            raise ManifestError(f"{utt_id}: model {model_id!r} needs a string 'hyp'", line_no)
        steps = entry.get("decode_steps")
        if steps is not None and (not isinstance(steps, int) or isinstance(steps, bool) or steps < 1):
            raise ManifestError(f"{utt_id}: decode_steps for {model_id!r} must be >= 1", line_no)
        outputs[model_id] = HypothesisRecord(hyp_text=entry["hyp"], decode_steps=steps)

    scores = obj.get("scores")
    if scores is not None:
        if not isinstance(scores, dict):
            raise ManifestError(f"{utt_id}: scores must be an object", line_no)
        for name, value in scores.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not np.isfinite(value):
                raise ManifestError(f"{utt_id}: score {name!r} must be a finite number", line_no)
        scores = {k: float(v) for k, v in scores.items()}

    logits_paths = obj.get("logits_path")
    if logits_paths is not None and not isinstance(logits_paths, dict):
        raise ManifestError(f"{utt_id}: logits_path must map model_id to path", line_no)

    return UtteranceRecord(
        utt_id=utt_id,
        ref_text=ref_text,
        enc_frames=enc_frames,
        model_outputs=outputs,
        scores=scores,
        accent=obj.get("accent"),
        features_path=obj.get("features_path"),
        logits_paths=logits_paths,
    )


def load_manifest(path: str | Path, split_name: Optional[str] = None) -> Corpus:
    """Load a line-delimited JSON manifest into a validated Corpus.

    Records come back in file order. Raises ManifestError with the offending
    line number on parse problems and CorpusValidationError on duplicate ids
    or references that tokenize to nothing.
    """
    path = Path(path)
    records: list[UtteranceRecord] = []
    registry: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise ManifestError("each line must be a JSON object", line_no)
            rec = _parse_record(obj, line_no)
            if rec.utt_id in seen:
                raise CorpusValidationError(f"duplicate utt_id {rec.utt_id!r}")
            if not tokenize(rec.ref_text):
                raise CorpusValidationError(
                    f"utterance {rec.utt_id!r} has an empty reference after tokenization"
                )
            seen.add(rec.utt_id)
            records.append(rec)
            for model_id in rec.model_outputs:
                if model_id not in registry:
                    registry.append(model_id)
    return Corpus(
        records=tuple(records),
        model_registry=tuple(registry),
        split_name=split_name if split_name is not None else path.stem,
        base_dir=str(path.parent),
    )


def _read_exact(fh, n: int, path: Path, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{path}: truncated {what} ({len(buf)} of {n} bytes)")
    return buf


def _load_array(path: str | Path, magic: bytes, header_fields: int) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(magic) + 1)
        if len(head) < len(magic) + 1 or head[: len(magic)] != magic:
            raise BadMagicError(f"{path}: expected magic {magic!r}")
        if head[len(magic)] != FORMAT_VERSION:
            raise BadMagicError(f"{path}: unsupported format version {head[len(magic)]}")
        header = _read_exact(fh, 4 * header_fields, path, "header")
        shape = struct.unpack("<" + "I" * header_fields, header)
        if any(s < 1 for s in shape):
            raise BadMagicError(f"{path}: non-positive dimension in header {shape}")
        count = int(np.prod([int(s) for s in shape], dtype=np.int64))
        payload = _read_exact(fh, 4 * count, path, "payload")
        if fh.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after declared payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    values.flags.writeable = False  # loaded tensors are shareable across readers
    return values


def load_features(path: str | Path) -> FeatureTensor:
    """Read a FTNS feature tensor file; the byte count is checked exactly."""
    return FeatureTensor(data=_load_array(path, FEATURE_MAGIC, 3))


def save_features(path: str | Path, data: np.ndarray) -> None:
    """Write a (L, T, D) array as a FTNS file (float32 little-endian)."""
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise CorpusValidationError(f"feature tensor must be 3-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("refusing to write non-finite feature values")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def load_logits(path: str | Path) -> LogitSequence:
    """Read a LGTS logit file."""
    return LogitSequence(data=_load_array(path, LOGIT_MAGIC, 2))


def save_logits(path: str | Path, data: np.ndarray) -> None:
    """Write a (steps, vocab) array as a LGTS file (float32 little-endian)."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise CorpusValidationError(f"logit sequence must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("refusing to write non-finite logit values")
    with open(path, "wb") as fh:
        fh.write(LOGIT_MAGIC + bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<II", *arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def validate_corpus(corpus: Corpus, required: Iterable[str] = ()) -> ValidationReport:
    """Report which records lack which capabilities.

    Passes iff every record carries every capability in ``required``; an
    empty requirement set always passes.
    """
    required = tuple(required)
    for cap in required:
        if cap not in CAPABILITIES:
            raise CorpusValidationError(f"unknown capability {cap!r}")
    missing: dict[str, list[str]] = {cap: [] for cap in CAPABILITIES}
    for rec in corpus.records:
        for cap in CAPABILITIES:
            if not rec.has_capability(cap):
                missing[cap].append(rec.utt_id)
    return ValidationReport(missing=missing, required=required)
