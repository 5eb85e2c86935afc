import json
import math

import pytest

from asrcascade import costmodel as cm
from asrcascade.corpus import load_manifest
from asrcascade.decider import DeciderConfig
from asrcascade.errors import CascadeError
from conftest import toy_record, write_manifest


def toy_encoder_cfg(**kw):
    base = dict(
        model_id="toy", d_model=4, enc_layers=1, dec_layers=1, ffn_mult=4.0, vocab=5, beam=1
    )
    base.update(kw)
    return cm.ModelCostConfig(**base)


class TestConv1dMacs:
    def test_hand_values(self):
        assert cm.conv1d_macs(cm.Conv1dSpec(2, 3, 3, 1), 10) == 180
        assert cm.conv1d_macs(cm.Conv1dSpec(1, 1, 1, 1), 7) == 7

    def test_strided_with_ceil(self):
        # out frames = ceil(9/2) = 5 -> 8*4*3*5
        assert cm.conv1d_macs(cm.Conv1dSpec(4, 8, 3, 2), 9) == 480

    def test_rejects_zero_frames(self):
        with pytest.raises(CascadeError):
            cm.conv1d_macs(cm.Conv1dSpec(1, 1, 1, 1), 0)


class TestEncoderMacs:
    def test_hand_value(self):
        # 4*2*16 + 2*4*4 + 2*2*4*16 = 128 + 32 + 256
        assert cm.encoder_macs(toy_encoder_cfg(), 2) == 416

    def test_layers_scale_stack_linearly(self):
        one = cm.encoder_macs(toy_encoder_cfg(enc_layers=1), 6)
        two = cm.encoder_macs(toy_encoder_cfg(enc_layers=2), 6)
        assert two == 2 * one  # no frontend, so the whole count is the stack

    def test_attention_term_is_quadratic(self):
        # enc(2T) - 2*enc(T) isolates the T^2 attention term: 4BT^2 - 2BT^2
        cfg = toy_encoder_cfg()
        t = 5
        quad_coeff = 2 * cfg.d_model * cfg.enc_layers
        assert cm.encoder_macs(cfg, 2 * t) - 2 * cm.encoder_macs(cfg, t) == 2 * quad_coeff * t * t

    def test_frontend_frames_chain(self):
        cfg = toy_encoder_cfg(frontend=(cm.Conv1dSpec(3, 4, 3, 1), cm.Conv1dSpec(4, 4, 3, 2)))
        assert cm.frontend_out_frames(cfg, 10) == 5
        assert cm.mel_frames_for(cfg, 5) == 10
        # frontend macs: 3*4*3*10 + 4*4*3*5 = 360 + 240, then the stack at T=5
        stack = cm.encoder_macs(toy_encoder_cfg(), 5)
        assert cm.encoder_macs(cfg, 10) == 600 + stack


class TestBeamDecodeMacs:
    def test_hand_value(self):
        # per-token 62, one-time cross K/V 24, prefix 4
        cfg = toy_encoder_cfg(d_model=2, ffn_mult=2.0, vocab=5, beam=1)
        assert cm.beam_decode_macs(cfg, enc_frames=3, decode_steps=1) == 90

    def test_beam_doubles_all_but_cross_kv(self):
        cfg = toy_encoder_cfg(d_model=2, ffn_mult=2.0, vocab=5, beam=1)
        kv_once = 2 * 3 * 2 * 2 * 1
        one = cm.beam_decode_macs(cfg, 3, 1, beam=1)
        two = cm.beam_decode_macs(cfg, 3, 1, beam=2)
        assert two == 2 * (one - kv_once) + kv_once

    def test_zero_steps_rejected(self):
        with pytest.raises(CascadeError):
            cm.beam_decode_macs(toy_encoder_cfg(), 3, 0)

    def test_counts_are_ints(self):
        out = cm.beam_decode_macs(cm.default_expensive_config(), 100, 9)
        assert isinstance(out, int)


class TestDeciderMacs:
    def test_weighted_sum_only(self):
        assert cm.decider_macs(None, (2, 3, 4)) == 24

    def test_default_decider_hand_expansion(self):
        dcfg = DeciderConfig(in_layers=2, in_dims=16)
        # wsum 2*100*16 + stem 16*256*3*100 + 6 convs 256*256*3*100 + head 256
        expected = 3200 + 1_228_800 + 6 * 19_660_800 + 256
        assert cm.decider_macs(dcfg, (2, 100, 16)) == expected == 119_197_056

    def test_small_next_to_expensive_decode(self):
        dcfg = DeciderConfig(in_layers=12, in_dims=768)
        cfg = cm.default_expensive_config()
        for t in (10, 50, 100, 500):
            assert cm.decider_macs(dcfg, (12, t, 768)) < cm.beam_decode_macs(cfg, t, 1)

    def test_shape_mismatch_rejected(self):
        dcfg = DeciderConfig(in_layers=2, in_dims=16)
        with pytest.raises(CascadeError):
            cm.decider_macs(dcfg, (3, 10, 16))


def pipeline_corpus(tmp_path, n=3):
    records = [
        toy_record(
            f"u{i}",
            "w1 w2 w3 w4 w5 w6",
            "w1 w2 w3 w4 zz zz",
            "w1 w2 w3 w4 w5 zz",
            enc_frames=24 + 8 * i,
        )
        for i in range(n)
    ]
    return load_manifest(write_manifest(tmp_path / "p.jsonl", records))


class TestPipelineMacs:
    def test_all_cheap_plain_equals_sum_of_ops(self, tmp_path):
        corpus = pipeline_corpus(tmp_path)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        assignment = {r.utt_id: "tiny" for r in corpus.records}
        report = cm.pipeline_macs(corpus, assignment, tiny, small)
        expected = 0
        for rec in corpus.records:
            mel = cm.mel_frames_for(small, rec.enc_frames)
            t = cm.frontend_out_frames(tiny, mel)
            steps = rec.model_outputs["tiny"].steps()
            expected += cm.encoder_macs(tiny, mel) + cm.beam_decode_macs(tiny, t, steps)
        assert report.total_macs == expected
        assert report.decider_macs == 0

    def test_single_expensive_with_decider_hand_sum(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=1)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        dcfg = DeciderConfig(in_layers=2, in_dims=8)
        rec = corpus.records[0]
        report = cm.pipeline_macs(
            corpus, {rec.utt_id: "small"}, tiny, small, decider_cfg=dcfg
        )
        mel = cm.mel_frames_for(small, rec.enc_frames)
        expected = (
            cm.encoder_macs(small, mel)
            + cm.decider_macs(dcfg, (2, rec.enc_frames, 8))
            + cm.beam_decode_macs(small, rec.enc_frames, rec.model_outputs["small"].steps())
        )
        assert report.total_macs == expected

    def test_decider_routed_cheap_pays_both_encoders(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=1)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        dcfg = DeciderConfig(in_layers=2, in_dims=8)
        rec = corpus.records[0]
        report = cm.pipeline_macs(corpus, {rec.utt_id: "tiny"}, tiny, small, decider_cfg=dcfg)
        mel = cm.mel_frames_for(small, rec.enc_frames)
        expected = (
            cm.encoder_macs(small, mel)
            + cm.decider_macs(dcfg, (2, rec.enc_frames, 8))
            + cm.encoder_macs(tiny, mel)
            + cm.beam_decode_macs(
                tiny, cm.frontend_out_frames(tiny, mel), rec.model_outputs["tiny"].steps()
            )
        )
        assert report.total_macs == expected

    def test_entropy_accounting(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=2)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        u0, u1 = (r.utt_id for r in corpus.records)
        report = cm.pipeline_macs(
            corpus, {u0: "tiny", u1: "small"}, tiny, small, accounting="entropy"
        )
        expected = 0
        for rec, assigned in zip(corpus.records, ("tiny", "small")):
            mel = cm.mel_frames_for(small, rec.enc_frames)
            t_tiny = cm.frontend_out_frames(tiny, mel)
            probe_steps = rec.model_outputs["tiny"].steps()
            expected += cm.encoder_macs(tiny, mel) + cm.beam_decode_macs(
                tiny, t_tiny, probe_steps, beam=1
            )
            if assigned == "small":
                expected += cm.encoder_macs(small, mel) + cm.beam_decode_macs(
                    small, rec.enc_frames, rec.model_outputs["small"].steps()
                )
        assert report.total_macs == expected

    def test_unassigned_and_unknown_model_errors(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=2)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        with pytest.raises(CascadeError, match="no assignment"):
            cm.pipeline_macs(corpus, {"u0": "tiny"}, tiny, small)
        with pytest.raises(CascadeError, match="unknown model"):
            cm.pipeline_macs(corpus, {"u0": "tiny", "u1": "medium"}, tiny, small)

    def test_additivity_over_partition(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=3)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        assignment = {"u0": "tiny", "u1": "small", "u2": "tiny"}
        whole = cm.pipeline_macs(corpus, assignment, tiny, small).total_macs
        parts = 0
        for rec in corpus.records:
            sub = type(corpus)(
                records=(rec,), model_registry=corpus.model_registry, split_name="part"
            )
            parts += cm.pipeline_macs(sub, {rec.utt_id: assignment[rec.utt_id]}, tiny, small).total_macs
        assert whole == parts

    def test_flip_to_expensive_never_cheaper(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=3)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        dcfg = DeciderConfig(in_layers=2, in_dims=8)
        for accounting, cfg in (("plain", None), ("decider", dcfg)):
            base = {r.utt_id: "tiny" for r in corpus.records}
            base_total = cm.pipeline_macs(
                corpus, base, tiny, small, decider_cfg=cfg, accounting=accounting
            ).total_macs
            for rec in corpus.records:
                flipped = dict(base)
                flipped[rec.utt_id] = "small"
                total = cm.pipeline_macs(
                    corpus, flipped, tiny, small, decider_cfg=cfg, accounting=accounting
                ).total_macs
                assert total >= base_total


class TestDefaultConfigStructure:
    def test_decode_dominates_encode_at_realistic_steps(self):
        # holds with >= 6% margin for steps = ceil(T/12) across T in [24, 2000]
        for cfg in (cm.default_cheap_config(), cm.default_expensive_config()):
            for t in range(24, 2001, 49):
                mel = cm.mel_frames_for(cfg, t)
                steps = math.ceil(t / 12)
                assert cm.beam_decode_macs(cfg, t, steps) > cm.encoder_macs(cfg, mel)

    def test_decider_below_five_percent_of_expensive_pipeline(self):
        small = cm.default_expensive_config()
        dcfg = DeciderConfig(in_layers=12, in_dims=768)
        for t in range(100, 2001, 100):
            mel = cm.mel_frames_for(small, t)
            decider = cm.decider_macs(dcfg, (12, t, 768))
            pipeline = (
                cm.encoder_macs(small, mel) + cm.beam_decode_macs(small, t, 1) + decider
            )
            assert decider < 0.05 * pipeline

    def test_expensive_costs_more_than_cheap_at_same_steps(self):
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        for t in (8, 40, 200):
            for steps in (1, 8, 20):
                mel = cm.mel_frames_for(small, t)
                cheap = cm.encoder_macs(tiny, mel) + cm.beam_decode_macs(
                    tiny, cm.frontend_out_frames(tiny, mel), steps
                )
                expensive = cm.encoder_macs(small, mel) + cm.beam_decode_macs(small, t, steps)
                assert expensive > cheap


class TestConfigIO:
    def test_json_round_trip(self, tmp_path):
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        path = tmp_path / "cost.json"
        with open(path, "w") as fh:
            json.dump({"cheap": cm.config_to_dict(tiny), "expensive": cm.config_to_dict(small)}, fh)
        cheap, expensive = cm.load_cost_configs(path)
        assert cheap == tiny and expensive == small

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "cost.json"
        with open(path, "w") as fh:
            json.dump({"cheap": cm.config_to_dict(cm.default_cheap_config())}, fh)
        with pytest.raises(CascadeError, match="expensive"):
            cm.load_cost_configs(path)

    def test_mac_report_rows(self, tmp_path):
        corpus = pipeline_corpus(tmp_path, n=2)
        tiny, small = cm.default_cheap_config(), cm.default_expensive_config()
        report = cm.pipeline_macs(corpus, {"u0": "tiny", "u1": "small"}, tiny, small)
        rows = report.csv_rows()
        assert rows[0] == ["utt_id", "encode", "decode", "decider", "total"]
        assert [r[0] for r in rows[1:]] == ["u0", "u1"]
        for row in rows[1:]:
            assert row[4] == row[1] + row[2] + row[3]
        blob = report.to_json_dict()
        assert blob["total_macs"] == report.total_macs
