"""Command-line interface.

Subcommands: synth, label, train, calibrate, evaluate, sweep, cost,
correlate. Each reads a manifest (and side files resolved relative to it),
writes CSV/JSON outputs into --out-dir, and renders matching figures unless
--no-figures is given. Any validation problem exits nonzero with a message
naming the offending utterance or field.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import costmodel, figures, metrics, routing, synthetic, training
from .corpus import load_manifest
from .decider import DeciderConfig, load_model, save_model
from .errors import CascadeError
from .evaluation import evaluate
from .routing import (
    EvalResources,
    RoutingPolicy,
    ScoredSample,
    calibrate_eer,
    calibrate_no_false_negative,
    load_policy,
    policy_scores,
    sweep_thresholds,
)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(args):
    corpus = load_manifest(args.manifest)
    if getattr(args, "features_dir", None):
        corpus = replace(corpus, base_dir=args.features_dir)
    return corpus


def _cost_configs(args):
    if getattr(args, "cost_config", None):
        return costmodel.load_cost_configs(args.cost_config)
    cheap = replace(costmodel.default_cheap_config(), model_id=args.cheap)
    expensive = replace(costmodel.default_expensive_config(), model_id=args.expensive)
    return cheap, expensive


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        lo, hi, n = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = synthetic.SyntheticSpec(
        n_samples=args.n,
        layers=args.layers,
        frames=args.frames,
        dims=args.dims,
        planted_margin=args.margin,
        noise=args.noise,
        ref_len_range=(args.ref_len_min, args.ref_len_max),
        cheap_id=args.cheap,
        expensive_id=args.expensive,
        with_logits=args.logits,
        seed=args.seed,
    )
    corpus, truth = synthetic.make_synthetic_corpus(spec, out)
    n_pos = sum(truth.labels.values())
    print(f"wrote {len(corpus)} utterances to {out} ({n_pos} need the expensive model)")
    return 0


def cmd_label(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    rows = [["utt_id", "wer_cheap", "wer_expensive", "label"]]
    for rec in corpus.records:
        for model_id in (args.cheap, args.expensive):
            if model_id not in rec.model_outputs:
                raise CascadeError(
                    f"utterance {rec.utt_id!r} has no hypothesis for model {model_id!r}"
                )
        wc = metrics.wer(rec.ref_text, rec.model_outputs[args.cheap].hyp_text).wer
        we = metrics.wer(rec.ref_text, rec.model_outputs[args.expensive].hyp_text).wer
        rows.append([rec.utt_id, wc, we, metrics.route_label(wc, we)])
    _write_csv(out / "labels.csv", rows)

    models = list(corpus.model_registry)
    matrix = metrics.relative_perf_matrix(corpus, models)
    _write_csv(out / "matrix.csv", [["model", *models]] + [[m, *r] for m, r in zip(models, matrix)])
    if not args.no_figures:
        figures.render_matrix(matrix, models, out / "matrix.png")
    print(f"labeled {len(corpus)} utterances; outputs in {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    examples = training.load_labeled_examples(corpus, args.cheap, args.expensive)
    train_set, val_set = training.split_examples(examples, args.val_fraction, args.seed)
    first = examples[0].features
    dcfg = DeciderConfig(
        in_layers=first.layers,
        in_dims=first.dims,
        channels=args.channels,
        res_blocks=args.res_blocks,
        kernel=args.kernel,
        seed=args.seed,
    )
    tcfg = training.TrainConfig(
        lr0=args.lr,
        total_steps=training.steps_for_epochs(len(train_set), args.epochs, args.batch_size),
        batch_size=args.batch_size,
        seed=args.seed,
    )
    result = training.train(train_set, val_set, dcfg, tcfg)
    save_model(out / "model.dcdr", result.model)
    _write_csv(
        out / "history.csv",
        [["epoch", "train_loss", "val_accuracy"]]
        + [[h.epoch, h.train_loss, h.val_accuracy] for h in result.history],
    )
    if not args.no_figures:
        figures.render_history(result.history, out / "history.png")
    print(
        f"trained on {len(train_set)} / validated on {len(val_set)}; "
        f"best val accuracy {result.best_val_accuracy:.2f}% at epoch {result.best_epoch}"
    )
    return 0


def cmd_calibrate(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    labels = training.route_labels(corpus, args.cheap, args.expensive)
    result: dict = {"mode": args.mode}
    if args.mode == "eer":
        resources = EvalResources(cheap_id=args.cheap, expensive_id=args.expensive)
        score_map = routing.resolve_scores(corpus, args.score_name, resources)
        samples = [
            ScoredSample(u, score_map[u], labels[u], orientation=args.orientation)
            for u in sorted(score_map)
        ]
        h = calibrate_eer(samples)
        result.update(score=args.score_name, orientation=args.orientation, h=h)
    else:
        by_id = {rec.utt_id: rec for rec in corpus.records}
        ordered = sorted(labels)
        wers = [
            metrics.wer(by_id[u].ref_text, by_id[u].model_outputs[args.cheap].hyp_text).wer
            for u in ordered
        ]
        t = calibrate_no_false_negative(wers, [labels[u] for u in ordered])
        result.update(t=t)
    _write_json(out / "calibration.json", result)
    print(f"calibration ({args.mode}): {result}")
    return 0


def _resources_for(policy: RoutingPolicy, args) -> EvalResources:
    resources = EvalResources(cheap_id=args.cheap, expensive_id=args.expensive)
    if policy.kind == "decider":
        resources.decider_model = load_model(policy.model_path)
    return resources


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    policy = load_policy(args.policy)
    cheap_cfg, expensive_cfg = _cost_configs(args)
    resources = _resources_for(policy, args)
    report = evaluate(
        corpus, policy, cheap_cfg, expensive_cfg, resources, accounting=args.accounting
    )
    _write_json(out / "report.json", report.to_json_dict())
    acc = "n/a" if report.decision_accuracy is None else f"{report.decision_accuracy:.1f}%"
    print(
        f"policy {policy.kind}: mean WER {report.mean_wer:.4f}, "
        f"total MACs {report.total_macs}, decision accuracy {acc}"
    )
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    cheap_cfg, expensive_cfg = _cost_configs(args)
    resources = EvalResources(cheap_id=args.cheap, expensive_id=args.expensive)
    if args.model:
        resources.decider_model = load_model(args.model)
        policy = RoutingPolicy(kind="decider", model_path=args.model, h=0.5)
    elif args.score_name:
        policy = RoutingPolicy(
            kind="threshold", score_name=args.score_name, h=0.0, orientation=args.orientation
        )
    else:
        raise CascadeError("sweep needs --model or --score-name as the score source")
    scores = policy_scores(policy, corpus, resources)
    grid = _parse_grid(args.threshold_grid)
    orientation = args.orientation if args.score_name else routing.HIGHER_MEANS_EXPENSIVE
    rows = sweep_thresholds(
        scores, corpus, grid, cheap_cfg, expensive_cfg, orientation=orientation
    )
    _write_csv(
        out / "sweep.csv",
        [["h", "mean_wer", "total_macs", "frac_expensive"]]
        + [[r.h, r.mean_wer, r.total_macs, r.frac_expensive] for r in rows],
    )
    if not args.no_figures:
        endpoints = []
        for kind, name in (("fixed_expensive", args.expensive), ("fixed_cheap", args.cheap)):
            rep = evaluate(corpus, RoutingPolicy(kind=kind), cheap_cfg, expensive_cfg, resources)
            endpoints.append((rep.total_macs, rep.mean_wer, name))
        figures.render_sweep(rows, endpoints, out / "sweep.png")
    print(f"swept {len(rows)} thresholds; outputs in {out}")
    return 0


def cmd_cost(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    policy = load_policy(args.policy)
    cheap_cfg, expensive_cfg = _cost_configs(args)
    resources = _resources_for(policy, args)
    report = evaluate(
        corpus, policy, cheap_cfg, expensive_cfg, resources, accounting=args.accounting
    )
    _write_csv(out / "cost.csv", report.mac_report.csv_rows())
    _write_json(out / "cost.json", report.mac_report.to_json_dict())
    print(
        f"encode {report.mac_report.encode_macs} + decode {report.mac_report.decode_macs} "
        f"+ decider {report.mac_report.decider_macs} = {report.total_macs} MACs"
    )
    return 0


def cmd_correlate(args) -> int:
    out = _out_dir(args)
    corpus = _load_corpus(args)
    xs, ys = [], []
    for rec in corpus.records:
        for model_id in (args.model_a, args.model_b):
            if model_id not in rec.model_outputs:
                raise CascadeError(
                    f"utterance {rec.utt_id!r} has no hypothesis for model {model_id!r}"
                )
        xs.append(metrics.wer(rec.ref_text, rec.model_outputs[args.model_a].hyp_text).wer)
        ys.append(metrics.wer(rec.ref_text, rec.model_outputs[args.model_b].hyp_text).wer)
    result = {
        "model_a": args.model_a,
        "model_b": args.model_b,
        "n": len(xs),
        "pearson": metrics.pearson(xs, ys),
        "spearman": metrics.spearman(xs, ys),
    }
    _write_json(out / "correlate.json", result)
    if not args.no_figures:
        figures.render_wer_scatter(xs, ys, (args.model_a, args.model_b), out / "wer_scatter.png")
    print(
        f"WER correlation {args.model_a} vs {args.model_b}: "
        f"pearson {result['pearson']:.4f}, spearman {result['spearman']:.4f}"
    )
    return 0


def _add_common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", required=True, help="line-delimited JSON corpus manifest")
        p.add_argument(
            "--features-dir",
            help="base directory for feature/logit paths (default: the manifest's directory)",
        )
    p.add_argument("--out-dir", required=True, help="directory for outputs")
    p.add_argument("--cheap", default="tiny", help="cheap model id (default: tiny)")
    p.add_argument("--expensive", default="small", help="expensive model id (default: small)")
    p.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    p.add_argument(
        "--single-thread",
        action="store_true",
        help="force fully serial execution for bit-stable outputs (the default execution mode)",
    )
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asrcascade",
        description="Route utterances between a cheap and an expensive ASR model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    _add_common(p, manifest=False)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--margin", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--ref-len-min", type=int, default=6)
    p.add_argument("--ref-len-max", type=int, default=12)
    p.add_argument("--logits", action="store_true", help="also emit cheap-model logit files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="routing labels and the relative-performance matrix")
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the decision network")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--channels", type=int, default=256)
    p.add_argument("--res-blocks", type=int, default=3)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit a decision threshold")
    _add_common(p)
    p.add_argument("--mode", choices=("eer", "nofn"), required=True)
    p.add_argument("--score-name", default="snr", help="score for eer mode")
    p.add_argument(
        "--orientation",
        choices=routing.ORIENTATIONS,
        default=routing.LOWER_MEANS_EXPENSIVE,
        help="which side of the threshold routes expensive (eer mode)",
    )
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="evaluate a routing policy")
    _add_common(p)
    p.add_argument("--policy", required=True, help="policy JSON file")
    p.add_argument("--cost-config", help="JSON file with cheap/expensive cost configs")
    p.add_argument("--accounting", choices=costmodel.ACCOUNTING_MODES, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="threshold sweep over the WER/MACs trade-off")
    _add_common(p)
    p.add_argument("--model", help="decider model file providing the scores")
    p.add_argument("--score-name", help="manifest score providing the scores")
    p.add_argument("--orientation", choices=routing.ORIENTATIONS, default=routing.HIGHER_MEANS_EXPENSIVE)
    p.add_argument(
        "--threshold-grid",
        default="0:1:11",
        help="comma-separated values or lo:hi:n (default 0:1:11)",
    )
    p.add_argument("--cost-config", help="JSON file with cheap/expensive cost configs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="per-utterance MAC table for a policy")
    _add_common(p)
    p.add_argument("--policy", required=True, help="policy JSON file")
    p.add_argument("--cost-config", help="JSON file with cheap/expensive cost configs")
    p.add_argument("--accounting", choices=costmodel.ACCOUNTING_MODES, default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("correlate", help="WER correlations between two models")
    _add_common(p)
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.set_defaults(func=cmd_correlate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CascadeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
