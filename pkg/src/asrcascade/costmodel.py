"""Multiply-accumulate (MAC) accounting for the transcription pipeline.

Counting conventions, applied uniformly:

* Only multiply-accumulates are counted. Layer norms, softmax, activations
  and embedding lookups are multiply-free or negligible and are excluded.
* Decoding assumes KV caching: per generated token, each decoder layer pays
  its projections once, and self-attention over the growing prefix is
  charged via the sum of prefix lengths. Cross-attention K/V projections
  are charged once per utterance and shared across beams.
* All counts are exact Python integers; there is no floating accumulation.

Absolute totals depend on assumptions (padding, step counts) that vary
between counting tools, so only structural properties of these numbers are
meaningful: decode dominating encode at realistic beam widths, and the
decision network costing a small fraction of the expensive pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Optional

from .errors import CascadeError

if TYPE_CHECKING:
    from .corpus import Corpus
    from .decider import DeciderConfig


@dataclass(frozen=True)
class Conv1dSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1:
            raise CascadeError(f"conv spec fields must be positive: {self}")


@dataclass(frozen=True)
class ModelCostConfig:
    """Architectural hyperparameters sufficient to count one ASR model's MACs."""

    model_id: str
    d_model: int
    enc_layers: int
    dec_layers: int
    ffn_mult: float
    vocab: int
    frontend: tuple[Conv1dSpec, ...] = ()
    beam: int = 8

    def __post_init__(self):
        if min(self.d_model, self.enc_layers, self.dec_layers, self.vocab, self.beam) < 1:
            raise CascadeError(f"cost config fields must be positive: {self.model_id}")
        if self.ffn_mult <= 0:
            raise CascadeError("ffn_mult must be positive")

    @property
    def ffn_dim(self) -> int:
        return int(round(self.ffn_mult * self.d_model))

    @property
    def frontend_stride(self) -> int:
        s = 1
        for conv in self.frontend:
            s *= conv.stride
        return s


@dataclass
class MacReport:
    """MAC totals plus a per-utterance breakdown, rows sorted by utt_id."""

    encode_macs: int
    decode_macs: int
    decider_macs: int
    rows: list[tuple[str, int, int, int]] = field(default_factory=list)

    @property
    def total_macs(self) -> int:
        return self.encode_macs + self.decode_macs + self.decider_macs

    def to_json_dict(self) -> dict:
        return {
            "encode_macs": self.encode_macs,
            "decode_macs": self.decode_macs,
            "decider_macs": self.decider_macs,
            "total_macs": self.total_macs,
            "rows": [
                {
                    "utt_id": utt_id,
                    "encode": enc,
                    "decode": dec,
                    "decider": dcd,
                    "total": enc + dec + dcd,
                }
                for utt_id, enc, dec, dcd in self.rows
            ],
        }

    def csv_rows(self) -> list[list]:
        out = [["utt_id", "encode", "decode", "decider", "total"]]
        for utt_id, enc, dec, dcd in self.rows:
            out.append([utt_id, enc, dec, dcd, enc + dec + dcd])
        return out


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def conv1d_macs(spec: Conv1dSpec, frames_in: int) -> int:
    """MACs of one same-padded 1-D convolution over ``frames_in`` frames."""
    if frames_in < 1:
        raise CascadeError("frames_in must be >= 1")
    out_frames = _ceil_div(frames_in, spec.stride)
    return spec.in_ch * spec.out_ch * spec.kernel * out_frames


def frontend_out_frames(cfg: ModelCostConfig, mel_frames: int) -> int:
    """Frame count after the convolutional front end (ceil at each stride)."""
    t = mel_frames
    for conv in cfg.frontend:
        t = _ceil_div(t, conv.stride)
    return t


def mel_frames_for(cfg: ModelCostConfig, enc_frames: int) -> int:
    """Mel frame count producing ``enc_frames`` after ``cfg``'s front end."""
    return enc_frames * cfg.frontend_stride


def encoder_macs(cfg: ModelCostConfig, mel_frames: int) -> int:
    """One encoder forward pass from mel frames.

    Per layer on T post-frontend frames: 4*T*d^2 for the Q/K/V/O
    projections, 2*T^2*d for attention score and context products, and
    2*T*d*ffn for the feed-forward pair.
    """
    if mel_frames < 1:
        raise CascadeError("mel_frames must be >= 1")
    total = 0
    t = mel_frames
    for conv in cfg.frontend:
        total += conv1d_macs(conv, t)
        t = _ceil_div(t, conv.stride)
    d = cfg.d_model
    per_layer = 4 * t * d * d + 2 * t * t * d + 2 * t * d * cfg.ffn_dim
    return total + cfg.enc_layers * per_layer


def beam_decode_macs(
    cfg: ModelCostConfig,
    enc_frames: int,
    decode_steps: int,
    beam: Optional[int] = None,
) -> int:
    """Beam-search decoding cost for one utterance.

    Per token and beam, each decoder layer pays cached self-attention
    projections (4*d^2), cross-attention Q and O (2*d^2), cross scores and
    context against the encoder output (2*enc_frames*d), and the
    feed-forward pair (2*d*ffn); the output projection adds d*vocab. Cross
    K/V projections (2*enc_frames*d^2 per layer) are paid once per
    utterance, and self-attention over the growing prefix adds
    beam * layers * 2 * d * sum(1..steps).
    """
    if enc_frames < 1:
        raise CascadeError("enc_frames must be >= 1")
    if decode_steps < 1:
        raise CascadeError("decode_steps must be >= 1")
    b = cfg.beam if beam is None else beam
    if b < 1:
        raise CascadeError("beam must be >= 1")
    d = cfg.d_model
    per_token = cfg.dec_layers * (
        4 * d * d + 2 * d * d + 2 * enc_frames * d + 2 * d * cfg.ffn_dim
    ) + d * cfg.vocab
    cross_kv_once = 2 * enc_frames * d * d * cfg.dec_layers
    prefix = b * cfg.dec_layers * 2 * d * (decode_steps * (decode_steps + 1) // 2)
    return b * decode_steps * per_token + cross_kv_once + prefix


def decider_conv_stack(dcfg: "DeciderConfig") -> list[Conv1dSpec]:
    """The decision network's convolutions in forward order."""
    stack = [Conv1dSpec(dcfg.in_dims, dcfg.channels, dcfg.kernel)]
    for _ in range(dcfg.res_blocks):
        stack.append(Conv1dSpec(dcfg.channels, dcfg.channels, dcfg.kernel))
        stack.append(Conv1dSpec(dcfg.channels, dcfg.channels, dcfg.kernel))
    return stack


def decider_macs(dcfg: Optional["DeciderConfig"], feature_shape: tuple[int, int, int]) -> int:
    """Decision network cost on one (L, T, D) feature tensor.

    L*T*D for the layer-weighted sum, plus the convolution stack, plus the
    final linear head (``channels`` MACs). ``dcfg=None`` degenerates to the
    weighted sum alone.
    """
    layers, frames, dims = feature_shape
    if min(layers, frames, dims) < 1:
        raise CascadeError(f"feature shape must be positive: {feature_shape}")
    total = layers * frames * dims
    if dcfg is None:
        return total
    if dcfg.in_dims != dims or dcfg.in_layers != layers:
        raise CascadeError(
            f"decider config expects (L={dcfg.in_layers}, D={dcfg.in_dims}), "
            f"features are (L={layers}, D={dims})"
        )
    for conv in decider_conv_stack(dcfg):
        total += conv1d_macs(conv, frames)
    return total + dcfg.channels


ACCOUNTING_MODES = ("plain", "decider", "entropy")


def pipeline_macs(
    corpus: "Corpus",
    assignments: Mapping[str, str],
    cheap_cfg: ModelCostConfig,
    expensive_cfg: ModelCostConfig,
    decider_cfg: Optional["DeciderConfig"] = None,
    accounting: Optional[str] = None,
) -> MacReport:
    """Total pipeline MACs for a routing assignment over a corpus.

    Accounting modes:

    * ``plain`` - each utterance pays its assigned model's encode + decode
      only (single-model rows, and baselines whose decision signal is
      computed externally).
    * ``decider`` - every utterance pays the expensive encoder plus the
      decision network; utterances routed cheap additionally pay cheap
      encode + decode, utterances routed expensive pay only the expensive
      decode (the encoder output is reused).
    * ``entropy`` - every utterance pays a full cheap greedy decode
      (beam=1) to obtain the confidence signal; re-routed utterances pay
      expensive encode + decode on top. The probe is reported under the
      encode/decode columns, not the decider column.

    Defaults to ``decider`` when a decider config is given, else ``plain``.
    """
    if accounting is None:
        accounting = "decider" if decider_cfg is not None else "plain"
    if accounting not in ACCOUNTING_MODES:
        raise CascadeError(f"unknown accounting mode {accounting!r}")
    if accounting == "decider" and decider_cfg is None:
        raise CascadeError("decider accounting requires a decider config")

    by_model = {cheap_cfg.model_id: cheap_cfg, expensive_cfg.model_id: expensive_cfg}
    known_ids = set(r.utt_id for r in corpus.records)
    extra = set(assignments) - known_ids
    if extra:
        raise CascadeError(f"assignments name unknown utterances: {sorted(extra)[:3]}")

    rows = []
    total_enc = total_dec = total_dcd = 0
    for rec in sorted(corpus.records, key=lambda r: r.utt_id):
        assigned = assignments.get(rec.utt_id)
        if assigned is None:
            raise CascadeError(f"utterance {rec.utt_id!r} has no assignment")
        if assigned not in by_model:
            raise CascadeError(f"utterance {rec.utt_id!r} assigned to unknown model {assigned!r}")
        mel = mel_frames_for(expensive_cfg, rec.enc_frames)

        def model_cost(cfg: ModelCostConfig, beam: Optional[int] = None) -> tuple[int, int]:
            hyp = rec.model_outputs.get(cfg.model_id)
            if hyp is None:
                raise CascadeError(
                    f"utterance {rec.utt_id!r} has no hypothesis for model {cfg.model_id!r}"
                )
            t = frontend_out_frames(cfg, mel)
            return encoder_macs(cfg, mel), beam_decode_macs(cfg, t, hyp.steps(), beam=beam)

        enc = dec = dcd = 0
        if accounting == "plain":
            enc, dec = model_cost(by_model[assigned])
        elif accounting == "decider":
            exp_enc, exp_dec = model_cost(expensive_cfg)
            enc += exp_enc
            dcd += decider_macs(
                decider_cfg, (decider_cfg.in_layers, rec.enc_frames, decider_cfg.in_dims)
            )
            if assigned == cheap_cfg.model_id:
                cheap_enc, cheap_dec = model_cost(cheap_cfg)
                enc += cheap_enc
                dec += cheap_dec
            else:
                dec += exp_dec
        else:  # entropy
            probe_enc, probe_dec = model_cost(cheap_cfg, beam=1)
            enc += probe_enc
            dec += probe_dec
            if assigned == expensive_cfg.model_id:
                exp_enc, exp_dec = model_cost(expensive_cfg)
                enc += exp_enc
                dec += exp_dec

        rows.append((rec.utt_id, enc, dec, dcd))
        total_enc += enc
        total_dec += dec
        total_dcd += dcd

    return MacReport(
        encode_macs=total_enc, decode_macs=total_dec, decider_macs=total_dcd, rows=rows
    )


def default_cheap_config() -> ModelCostConfig:
    """Cost shape of the small routed-to model (tiny encoder-decoder)."""
    return ModelCostConfig(
        model_id="tiny",
        d_model=384,
        enc_layers=4,
        dec_layers=4,
        ffn_mult=4.0,
        vocab=51865,
        frontend=(Conv1dSpec(80, 384, 3, 1), Conv1dSpec(384, 384, 3, 2)),
        beam=8,
    )


def default_expensive_config() -> ModelCostConfig:
    """Cost shape of the large routed-to model."""
    return ModelCostConfig(
        model_id="small",
        d_model=768,
        enc_layers=12,
        dec_layers=12,
        ffn_mult=4.0,
        vocab=51865,
        frontend=(Conv1dSpec(80, 768, 3, 1), Conv1dSpec(768, 768, 3, 2)),
        beam=8,
    )


def config_to_dict(cfg: ModelCostConfig) -> dict:
    return {
        "model_id": cfg.model_id,
        "d_model": cfg.d_model,
        "enc_layers": cfg.enc_layers,
        "dec_layers": cfg.dec_layers,
        "ffn_mult": cfg.ffn_mult,
        "vocab": cfg.vocab,
        "frontend": [
            {"in_ch": c.in_ch, "out_ch": c.out_ch, "kernel": c.kernel, "stride": c.stride}
            for c in cfg.frontend
        ],
        "beam": cfg.beam,
    }


def config_from_dict(obj: dict) -> ModelCostConfig:
    frontend = tuple(
        Conv1dSpec(c["in_ch"], c["out_ch"], c["kernel"], c.get("stride", 1))
        for c in obj.get("frontend", [])
    )
    return ModelCostConfig(
        model_id=obj["model_id"],
        d_model=obj["d_model"],
        enc_layers=obj["enc_layers"],
        dec_layers=obj["dec_layers"],
        ffn_mult=obj["ffn_mult"],
        vocab=obj["vocab"],
        frontend=frontend,
        beam=obj.get("beam", 8),
    )


def load_cost_configs(path: str | Path) -> tuple[ModelCostConfig, ModelCostConfig]:
    """Read {"cheap": {...}, "expensive": {...}} from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return config_from_dict(obj["cheap"]), config_from_dict(obj["expensive"])
    except KeyError as exc:
        raise CascadeError(f"cost config file needs key {exc.args[0]!r}") from None
