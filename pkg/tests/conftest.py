import json

import pytest

from asrcascade.corpus import load_manifest


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def toy_record(utt_id, ref, cheap_hyp, expensive_hyp, enc_frames=40, **extra):
    rec = {
        "utt_id": utt_id,
        "ref_text": ref,
        "enc_frames": enc_frames,
        "models": {"tiny": {"hyp": cheap_hyp}, "small": {"hyp": expensive_hyp}},
    }
    rec.update(extra)
    return rec


@pytest.fixture
def toy_corpus(tmp_path):
    """Three utterances with hand-checkable WER pairs.

    u1: cheap perfect (0), expensive 1/3     -> label 0
    u2: cheap 2/4, expensive 1/4             -> label 1
    u3: cheap 1/2, expensive 1/2 (tie)       -> label 0
    """
    records = [
        toy_record("u1", "a b c", "a b c", "a x c"),
        toy_record("u2", "a b c d", "a x y d", "a b c z"),
        toy_record("u3", "a b", "a x", "y b"),
    ]
    path = write_manifest(tmp_path / "toy.jsonl", records)
    return load_manifest(path)
