"""``vrfer`` command line.

Exit codes: 0 success, 1 validation or domain error, 2 usage error.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .classifiers import MlpModel, extract_features, predict_proba, train_logreg, train_mlp
from .errors import DataError, VrferError
from .evaluation import agreement_analysis, evaluate, render_report
from .fileio import atomic_write_json, atomic_write_text
from .fusion import (
    LATE_STRATEGIES, IntermediateFusionModel, LateFusionModel, fusion_predict_proba, train_intermediate_fusion,
    train_late_fusion,
)
from .hypersearch import FusionSearchData, GridSpec, run_grid_search
from .modelio import load_model, save_model
from .training import TrainConfig


def _read_json(path, what: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: no such {what} file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON in {what} file ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: {what} file must hold a JSON object")
    return doc


def _train_settings(path, default_batch: int) -> tuple[TrainConfig, dict]:
    doc = _read_json(path, "training config") if path else {}
    return TrainConfig.from_dict(doc, batch_size=default_batch), doc


def _fea_model(path) -> MlpModel:
    model = load_model(path)
    if not isinstance(model, MlpModel):
        raise DataError(f"{path}: fusion needs an MLP FEA model, got kind {model.kind!r}")
    return model


def _predictions_records(samples, probs) -> list[dict]:
    out = []
    for s, p in zip(samples, probs):
        rec = {"sample_id": s.id}
        if isinstance(s, D.MultimodalSample):
            rec["view"] = s.view
        rec.update({"pred": D.EMOTIONS[int(np.argmax(p))], "probs": p.tolist()})
        out.append(rec)
    return out


def cmd_synth(args) -> int:
    config = D.SynthConfig.from_dict(_read_json(args.config, "synth config"))
    bundle, observations = D.generate_synthetic(config)
    out = Path(args.out_dir)
    D.save_fea_dataset(bundle, out / "fea.jsonl")
    D.save_image_observations(observations, out / "image_obs.jsonl")
    print(D.format_split_summary(D.split_summary(bundle)))
    return 0


def cmd_train(args) -> int:
    bundle = D.load_fea_dataset(args.data)
    config, doc = _train_settings(args.config, 32)
    if args.model == "mlp":
        model, history = train_mlp(bundle, config, tuple(doc.get("hidden", (128, 64))), doc.get("dropout", 0.2))
    else:
        model, history = train_logreg(bundle, config, doc.get("l2_strength", 0.0))
    save_model(model, args.out)
    history_path = Path(args.history) if args.history else Path(args.out).with_suffix(".history.json")
    atomic_write_json(history_path, history.to_dict())
    summary = {"model": args.model, "selected_epoch": history.selected_epoch,
               "val_accuracy": history.best_val_accuracy}
    if bundle.test:
        summary["test_accuracy"] = evaluate(np.argmax(predict_proba(model, bundle.test), axis=1),
                                            D.labels_of(bundle.test)).accuracy
    print(json.dumps(summary))
    return 0


def cmd_extract_features(args) -> int:
    model = _fea_model(args.model)
    bundle = D.load_fea_dataset(args.data)
    samples = list(bundle.samples)
    feats = extract_features(model, samples) if samples else np.zeros((0, model.first_layer.n_out))
    D.dump_jsonl(({"sample_id": s.id, "split": s.split, "features": f.tolist()} for s, f in zip(samples, feats)),
                 args.out)
    print(f"wrote {len(samples)} feature vectors", file=sys.stderr)
    return 0


def cmd_fuse(args) -> int:
    fea_model = _fea_model(args.fea_model)
    bundle = D.load_fea_dataset(args.data)
    mm = D.pair_multimodal(bundle, D.load_image_observations(args.image_obs), args.require_both_views)
    if args.strategy == "intermediate":
        config, doc = _train_settings(args.config, 128)
        model, history = train_intermediate_fusion(fea_model, mm, config, doc.get("projection_width", 512),
                                                   doc.get("dropout", 0.4), doc.get("gate", "softmax"))
    else:
        config, _ = _train_settings(args.config, 32)
        model, history = train_late_fusion(args.strategy, fea_model, mm, config)
    save_model(model, args.out)
    if args.history:
        atomic_write_json(args.history, history.to_dict())
    test = mm.test
    if not test:
        print("no test samples; skipping evaluation", file=sys.stderr)
        return 0
    report = evaluate(np.argmax(fusion_predict_proba(model, test), axis=1), D.labels_of(test))
    if args.report:
        atomic_write_json(args.report, report.to_dict(), indent=2)
    print(render_report(report, "markdown"))
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    bundle = D.load_fea_dataset(args.data)
    if isinstance(model, (LateFusionModel, IntermediateFusionModel)):
        if not args.image_obs:
            raise DataError(f"model kind {model.kind!r} needs --image-obs")
        samples = D.pair_multimodal(bundle, D.load_image_observations(args.image_obs), False).split(args.split)
        probs_of = lambda s: fusion_predict_proba(model, s)  # noqa: E731
    else:
        samples = bundle.split(args.split)
        probs_of = lambda s: predict_proba(model, s)  # noqa: E731
    if not samples:
        raise DataError(f"split {args.split!r} is empty")
    probs = probs_of(samples)
    report = evaluate(np.argmax(probs, axis=1), D.labels_of(samples))
    text = render_report(report, args.format)
    if args.report:
        atomic_write_text(args.report, text + "\n")
    else:
        print(text)
    if args.preds:
        D.dump_jsonl(_predictions_records(samples, probs), args.preds)
    return 0


def load_predictions(path) -> dict:
    """Map (sample_id, view or None) -> label index from a preds.jsonl file."""
    out = {}
    for lineno, rec in D._read_jsonl(path):
        try:
            key = (rec["sample_id"], rec.get("view"))
            pred = D.LABEL_INDEX[rec["pred"]]
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing or unknown value for {exc.args[0]!r}") from None
        if key in out:
            raise DataError(f"{path}:{lineno}: duplicate prediction for {key}")
        out[key] = pred
    return out


def align_predictions(preds_a: dict, preds_b: dict) -> list[tuple]:
    """Join two prediction maps. View-less predictions broadcast over the other side's views."""
    keys_b = list(preds_b)
    if set(preds_a) == set(preds_b):
        return [(k, preds_a[k], preds_b[k]) for k in keys_b]
    if all(v is None for _, v in preds_a) and len(preds_a) < len(preds_b):
        if {sid for sid, _ in keys_b} == {sid for sid, _ in preds_a}:
            return [((sid, view), preds_a[(sid, None)], preds_b[(sid, view)]) for sid, view in keys_b]
    if all(v is None for _, v in preds_b) and len(preds_b) < len(preds_a):
        flipped = align_predictions(preds_b, preds_a)
        return [(k, a, b) for k, b, a in flipped]
    raise DataError(f"prediction files do not align ({len(preds_a)} vs {len(preds_b)} rows)")


def cmd_compare(args) -> int:
    rows = align_predictions(load_predictions(args.preds_a), load_predictions(args.preds_b))
    labels_by_id = {s.id: s.label for s in D.load_fea_dataset(args.labels).samples}
    missing = [k[0] for k, _, _ in rows if k[0] not in labels_by_id]
    if missing:
        raise DataError(f"no label for sample id(s) {missing[:5]}")
    y = np.array([labels_by_id[k[0]] for k, _, _ in rows], dtype=np.int64)
    a = np.array([r[1] for r in rows], dtype=np.int64)
    b = np.array([r[2] for r in rows], dtype=np.int64)
    reports = {"model_a": evaluate(a, y), "model_b": evaluate(b, y)}
    table = agreement_analysis(a, b, y)
    text = render_report(reports, args.format, agreement=table)
    if args.report:
        atomic_write_text(args.report, text + "\n")
    else:
        print(text)
    print(f"oracle fusion accuracy {table.oracle_accuracy:.4f} over {table.total} samples", file=sys.stderr)
    return 0


def cmd_gridsearch(args) -> int:
    spec = GridSpec.load(args.spec)
    bundle = D.load_fea_dataset(args.data)
    if spec.model in ("late_fusion", "intermediate_fusion"):
        if not (args.fea_model and args.image_obs):
            raise DataError(f"grid model {spec.model!r} needs --fea-model and --image-obs")
        data = FusionSearchData(D.pair_multimodal(bundle, D.load_image_observations(args.image_obs), False),
                                _fea_model(args.fea_model))
    else:
        data = bundle
    result = run_grid_search(spec, data, args.parallelism, evaluate_all=args.evaluate_all)
    atomic_write_text(args.out, result.to_jsonl())
    if args.timings:
        atomic_write_json(args.timings, {str(r.index): r.wall_time for r in result.ranked})
    print(json.dumps({"winner": result.winner.to_dict()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrfer", description="Facial-expression recognition from VR headset "
                                     "expression activations, with image-model fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic FEA + image-observation dataset")
    p.add_argument("--config", required=True, help="synth.json configuration")
    p.add_argument("--out-dir", required=True, help="directory for fea.jsonl and image_obs.jsonl")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a unimodal FEA classifier")
    p.add_argument("--data", required=True, help="fea.jsonl")
    p.add_argument("--model", required=True, choices=["mlp", "logreg"])
    p.add_argument("--config", help="train.json (TrainConfig fields plus hidden/dropout/l2_strength)")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--history", help="training history JSON (default: <out>.history.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract-features", help="emit first-layer MLP features per sample")
    p.add_argument("--model", required=True, help="trained MLP model file")
    p.add_argument("--data", required=True, help="fea.jsonl")
    p.add_argument("--out", required=True, help="output feats.jsonl")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("fuse", help="train a late or intermediate fusion model")
    p.add_argument("--strategy", required=True, choices=[*LATE_STRATEGIES, "intermediate"])
    p.add_argument("--fea-model", required=True, help="frozen MLP model file")
    p.add_argument("--data", required=True, help="fea.jsonl")
    p.add_argument("--image-obs", required=True, help="image_obs.jsonl")
    p.add_argument("--config", help="train.json (plus projection_width/dropout/gate for intermediate)")
    p.add_argument("--out", required=True, help="output fusion model file")
    p.add_argument("--report", help="write the test-set evaluation report as JSON")
    p.add_argument("--history", help="write the training history as JSON")
    p.add_argument("--require-both-views", action="store_true", help="reject samples lacking a view")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="evaluate a saved model on one split")
    p.add_argument("--model", required=True, help="any saved model file")
    p.add_argument("--data", required=True, help="fea.jsonl")
    p.add_argument("--image-obs", help="image_obs.jsonl (fusion models)")
    p.add_argument("--split", default="test", choices=list(D.SPLITS))
    p.add_argument("--report", help="report output file (default: stdout)")
    p.add_argument("--format", default="json", choices=["json", "markdown"])
    p.add_argument("--preds", help="also write per-sample predictions (preds.jsonl)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="agreement analysis of two prediction files")
    p.add_argument("--preds-a", required=True, help="preds.jsonl of model A")
    p.add_argument("--preds-b", required=True, help="preds.jsonl of model B")
    p.add_argument("--labels", required=True, help="fea.jsonl supplying true labels")
    p.add_argument("--report", help="report output file (default: stdout)")
    p.add_argument("--format", default="json", choices=["json", "markdown"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gridsearch", help="grid search with best-validation selection")
    p.add_argument("--spec", required=True, help="grid.json")
    p.add_argument("--data", required=True, help="fea.jsonl")
    p.add_argument("--parallelism", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", required=True, help="results.jsonl, one candidate per line, ranked")
    p.add_argument("--fea-model", help="frozen MLP (fusion grids)")
    p.add_argument("--image-obs", help="image_obs.jsonl (fusion grids)")
    p.add_argument("--evaluate-all", action="store_true", help="compute test accuracy for every candidate")
    p.add_argument("--timings", help="write per-candidate wall times to this JSON file")
    p.set_defaults(func=cmd_gridsearch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "parallelism", 1) < 1:
        print("vrfer: error: --parallelism must be ≥ 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (VrferError, OSError) as exc:
        print(f"vrfer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
