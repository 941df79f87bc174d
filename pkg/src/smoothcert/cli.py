"""Batch command-line front end.

Subcommands cover the full experimental protocol: ingest raw files into
the binary container, split/sample, inject a backdoor, certify with the
exact smoothed K-NN path or the Monte-Carlo ensemble path, and render
metric reports.  Every command writes a manifest holding the exact argv,
input hashes and output paths; `replay` re-executes a manifest and, because
every stage is seeded, reproduces its outputs byte for byte.

Exit codes: 0 success, 2 usage or validation failure, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from joblib import Parallel, delayed

from . import __version__
from .attacks import PATTERN_KINDS, BackdoorSpec, PoisonedDataset, inject
from .data import (
    SplitSpec,
    binary_pair,
    dataset_sha256,
    load_csv_tabular,
    load_dataset,
    load_idx_images,
    save_dataset,
    split,
    standardize,
    take_per_class,
)
from .knn import build_similarity_model, knn_certify
from .learners import LEARNER_KINDS, BaseLearnerSpec, DPConfig
from .metrics import (
    EvaluationRecord,
    abstain_rate,
    emit_report,
    load_records,
    save_records,
    summarize_records,
)
from .pipeline import (
    PipelineError,
    SmoothingConfig,
    load_ensemble,
    save_ensemble,
    smoothed_predict,
    train_ensemble,
)

DATA_DIR_ENV = "SMOOTHCERT_DATA"


def data_dir() -> str:
    """Directory searched for raw datasets (overridable via environment)."""
    return os.environ.get(DATA_DIR_ENV, os.path.join(os.getcwd(), "data"))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, argv, inputs, outputs, extra=None) -> None:
    manifest = {
        "tool": "smoothcert",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_radii(text: str) -> tuple:
    try:
        radii = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"--radii must be a comma-separated list of numbers, got {text!r}")
    if not radii:
        raise ValueError("--radii must name at least one radius")
    return radii


def cmd_ingest(args, argv) -> int:
    if args.csv is not None:
        ds = load_csv_tabular(args.csv, label_column=args.label_column)
        inputs = [args.csv]
    else:
        ds = load_idx_images(args.idx_images, args.idx_labels)
        inputs = [args.idx_images, args.idx_labels]
    if args.binary_pair is not None:
        ds = binary_pair(ds, args.binary_pair[0], args.binary_pair[1])
    save_dataset(ds, args.out)
    _write_manifest(
        args.out + ".manifest.json", "ingest", argv, inputs, [args.out],
        extra={"dataset_sha256": dataset_sha256(ds), "rows": ds.n, "features": ds.d},
    )
    print(f"ingested {ds.n} rows x {ds.d} features ({ds.class_count} classes) -> {args.out}")
    return 0


def cmd_split(args, argv) -> int:
    ds = load_dataset(args.dataset)
    if isinstance(ds, PoisonedDataset):
        raise ValueError("split expects a clean dataset container")
    train, test = split(ds, SplitSpec(args.train_fraction, args.seed))
    if args.standardize:
        train, test = standardize(train, test)
    save_dataset(train, args.train_out)
    save_dataset(test, args.test_out)
    _write_manifest(
        args.train_out + ".manifest.json", "split", argv, [args.dataset],
        [args.train_out, args.test_out],
        extra={"train_rows": train.n, "test_rows": test.n, "standardized": bool(args.standardize)},
    )
    print(f"split {ds.n} rows -> train {train.n} / test {test.n}")
    return 0


def cmd_sample(args, argv) -> int:
    ds = load_dataset(args.dataset)
    if isinstance(ds, PoisonedDataset):
        raise ValueError("sample expects a clean dataset container")
    small = take_per_class(ds, args.per_class, args.seed)
    save_dataset(small, args.out)
    _write_manifest(
        args.out + ".manifest.json", "sample", argv, [args.dataset], [args.out],
        extra={"rows": small.n},
    )
    print(f"sampled {small.n} rows (<= {args.per_class} per class) -> {args.out}")
    return 0


def cmd_attack(args, argv) -> int:
    ds = load_dataset(args.dataset)
    if isinstance(ds, PoisonedDataset):
        raise ValueError("refusing to poison an already poisoned container")
    spec = BackdoorSpec(
        kind=args.pattern,
        l2_norm=args.l2_norm,
        poison_ratio=args.poison_ratio,
        source_label=args.source,
        target_label=args.target,
        pattern_seed=args.pattern_seed,
    )
    poisoned = inject(ds, spec, rng_seed=args.seed)
    save_dataset(poisoned, args.out)
    _write_manifest(
        args.out + ".manifest.json", "attack", argv, [args.dataset], [args.out],
        extra={
            "poisoned_rows": poisoned.poisoned_count,
            "attack_l2_total": poisoned.attack_l2_total,
            "dataset_sha256": dataset_sha256(poisoned),
        },
    )
    print(f"poisoned {poisoned.poisoned_count}/{ds.n} rows "
          f"(aggregate magnitude {poisoned.attack_l2_total:.4f}) -> {args.out}")
    return 0


def _load_train_test(args):
    """Common evaluation setup: triggered test inputs vs clean ground truth."""
    train_obj = load_dataset(args.train)
    test = load_dataset(args.test)
    if isinstance(test, PoisonedDataset):
        raise ValueError("the test container must be clean; triggers are applied at run time")
    poisoned = train_obj if isinstance(train_obj, PoisonedDataset) else None
    train = poisoned.dataset if poisoned is not None else train_obj
    if train.d != test.d:
        raise ValueError(f"train dimension {train.d} != test dimension {test.d}")
    test_features = test.features
    if poisoned is not None and not args.no_trigger:
        test_features = test_features + poisoned.pattern
    limit = args.limit if args.limit is not None else test.n
    if limit < 1:
        raise ValueError("--limit must be positive")
    return train_obj, train, test, test_features[:limit], test.labels[:limit]


def _attack_metadata(train_obj):
    if isinstance(train_obj, PoisonedDataset):
        spec = train_obj.spec
        return {"attack_kind": spec.kind, "pattern_l2": spec.l2_norm, "poison_ratio": spec.poison_ratio}
    return {"attack_kind": "none", "pattern_l2": 0.0, "poison_ratio": 0.0}


def _emit_run_outputs(args, argv, command, records, metadata, inputs, extra=None):
    os.makedirs(args.out, exist_ok=True)
    records_path = os.path.join(args.out, "records.jsonl")
    save_records(records, records_path)
    radii = _parse_radii(args.radii)
    row = summarize_records(records, radii, sigma=args.sigma, **metadata)
    outputs = [records_path]
    for fmt in ("csv", "json"):
        path = os.path.join(args.out, f"report.{fmt}")
        with open(path, "w") as f:
            f.write(emit_report([row], radii, fmt=fmt))
        outputs.append(path)
    _write_manifest(
        os.path.join(args.out, "manifest.json"), command, argv, inputs, outputs, extra=extra
    )
    print(f"prediction accuracy {row.prediction_acc:.3f}, abstain rate {abstain_rate(records):.3f}")
    for radius, acc, rate in zip(radii, row.certified_acc, row.certified_rate):
        print(f"  R={radius:g}: certified accuracy {acc:.3f}, certified rate {rate:.3f}")
    return 0


def cmd_certify_knn(args, argv) -> int:
    train_obj, train, test, test_features, test_labels = _load_train_test(args)
    if args.k > train.n:
        raise ValueError(f"--k {args.k} exceeds training size {train.n}")
    model = build_similarity_model(train, test_features, levels=args.buckets, sigma=args.sigma)

    def one(row):
        return knn_certify(train, row, args.sigma, args.k, model)

    if args.workers > 1:
        preds = Parallel(n_jobs=args.workers)(delayed(one)(row) for row in test_features)
    else:
        preds = [one(row) for row in test_features]
    records = [
        EvaluationRecord.from_prediction(y, p) for y, p in zip(test_labels, preds)
    ]
    return _emit_run_outputs(
        args, argv, "certify-knn", records, _attack_metadata(train_obj),
        [args.train, args.test],
        extra={"k": args.k, "sigma": args.sigma, "buckets": args.buckets,
               "trigger_applied": not args.no_trigger},
    )


def _learner_from_args(args) -> BaseLearnerSpec:
    dp = None
    if args.dp_clip is not None or args.dp_noise is not None:
        if args.dp_clip is None or args.dp_noise is None:
            raise ValueError("--dp-clip and --dp-noise must be given together")
        dp = DPConfig(clip_norm=args.dp_clip, noise_multiplier=args.dp_noise)
    hidden = tuple(int(tok) for tok in args.hidden_sizes.split(",") if tok.strip())
    return BaseLearnerSpec(
        kind=args.learner,
        hidden_sizes=hidden,
        k=args.k,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        dp=dp,
    )


def cmd_certify_mc(args, argv) -> int:
    train_obj, train, test, test_features, test_labels = _load_train_test(args)
    learner = _learner_from_args(args)
    config = SmoothingConfig(
        sigma=args.sigma,
        ensemble_size=args.ensemble_size,
        alpha=args.alpha,
        master_seed=args.seed,
    )
    ensemble_dir = os.path.join(args.out, "ensemble")
    ensemble = None
    if args.resume:
        if not os.path.isdir(ensemble_dir):
            raise ValueError(f"--resume set but no persisted ensemble at {ensemble_dir}")
        ensemble, manifest = load_ensemble(ensemble_dir)
        if manifest["dataset_sha256"] != dataset_sha256(train_obj):
            raise ValueError("persisted ensemble was trained on a different dataset")
    else:
        # members checkpoint into the ensemble directory as they finish, so
        # an interrupted long run picks up where it stopped
        ensemble = train_ensemble(
            train, learner, config, workers=args.workers,
            checkpoint_dir=ensemble_dir, dataset_hash=dataset_sha256(train_obj),
        )
        save_ensemble(ensemble, ensemble_dir, config, learner, dataset=train_obj)

    preds = [
        smoothed_predict(ensemble, row, config, train.class_count) for row in test_features
    ]
    records = [EvaluationRecord.from_prediction(y, p) for y, p in zip(test_labels, preds)]
    return _emit_run_outputs(
        args, argv, "certify-mc", records, _attack_metadata(train_obj),
        [args.train, args.test],
        extra={
            "learner": learner.kind,
            "ensemble_size": config.ensemble_size,
            "trained_members": len(ensemble),
            "failed_members": ensemble.failures,
            "alpha": config.alpha,
            "sigma": config.sigma,
            "master_seed": config.master_seed,
            "trigger_applied": not args.no_trigger,
            "resumed": bool(args.resume),
        },
    )


def cmd_report(args, argv) -> int:
    records = []
    for path in args.records:
        records.extend(load_records(path))
    radii = _parse_radii(args.radii)
    row = summarize_records(
        records, radii, attack_kind=args.attack_kind, pattern_l2=args.pattern_l2,
        poison_ratio=args.poison_ratio, sigma=args.sigma,
    )
    text = emit_report([row], radii, fmt=args.format)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        _write_manifest(
            args.out + ".manifest.json", "report", argv, list(args.records), [args.out]
        )
    else:
        sys.stdout.write(text)
    return 0


def cmd_replay(args, argv) -> int:
    with open(args.manifest) as f:
        manifest = json.load(f)
    stored = manifest.get("argv")
    if not stored:
        raise ValueError(f"{args.manifest} does not record an argv to replay")
    if stored[0] == "replay":
        raise ValueError("refusing to replay a replay manifest")
    print(f"replaying: smoothcert {' '.join(stored)}")
    return main(stored)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothcert",
        description="certified robustness against training-set backdoor attacks",
    )
    parser.add_argument("--version", action="version", version=f"smoothcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw IDX/CSV data into a dataset container")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", help="numeric CSV file")
    src.add_argument("--idx-images", help="IDX image file (optionally gzipped)")
    p.add_argument("--idx-labels", help="IDX label file (required with --idx-images)")
    p.add_argument("--label-column", type=int, default=-1, help="CSV label column index")
    p.add_argument("--binary-pair", nargs=2, type=int, metavar=("A", "B"),
                   help="keep labels A and B only, relabeled 0/1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="deterministic train/test split of a container")
    p.add_argument("--dataset", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true",
                   help="scale columns to train-split zero mean / unit variance")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("sample", help="downsample a container to at most N rows per class")
    p.add_argument("--dataset", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("attack", help="inject a backdoor into a dataset container")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pattern", required=True, choices=PATTERN_KINDS)
    p.add_argument("--l2-norm", type=float, required=True)
    p.add_argument("--poison-ratio", type=float, required=True)
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="row-selection seed")
    p.add_argument("--pattern-seed", type=int, default=0, help="blending pattern seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    def add_eval_args(p, default_radii):
        p.add_argument("--train", required=True, help="training container (clean or poisoned)")
        p.add_argument("--test", required=True, help="clean test container")
        p.add_argument("--sigma", type=float, required=True)
        p.add_argument("--no-trigger", action="store_true",
                       help="evaluate on clean test inputs even when train is poisoned")
        p.add_argument("--limit", type=int, default=None, help="certify only the first N test rows")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--radii", default=default_radii, help="comma-separated report grid")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("certify-knn", help="exact smoothed K-NN certification")
    add_eval_args(p, "0.05,0.1,0.2,0.5,1.0")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--buckets", type=int, default=200, help="similarity quantization levels")
    p.set_defaults(func=cmd_certify_knn)

    p = sub.add_parser("certify-mc", help="Monte-Carlo ensemble certification")
    add_eval_args(p, "0.2,0.5,1.0,2.0")
    p.add_argument("--learner", required=True, choices=LEARNER_KINDS)
    p.add_argument("--ensemble-size", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0, help="master seed for all member streams")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--hidden-sizes", default="32", help="comma-separated MLP widths")
    p.add_argument("--k", type=int, default=5, help="neighbors for the knn-voter learner")
    p.add_argument("--dp-clip", type=float, default=None, help="per-example gradient clip norm")
    p.add_argument("--dp-noise", type=float, default=None, help="DP noise multiplier")
    p.add_argument("--resume", action="store_true", help="reuse the persisted ensemble")
    p.set_defaults(func=cmd_certify_mc)

    p = sub.add_parser("report", help="metrics tables from saved record files")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--radii", default="0.2,0.5,1.0,2.0")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--attack-kind", default="none")
    p.add_argument("--pattern-l2", type=float, default=0.0)
    p.add_argument("--poison-ratio", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-execute the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ingest" and args.idx_images is not None and args.idx_labels is None:
        parser.error("--idx-labels is required with --idx-images")
    try:
        return args.func(args, argv)
    except (ValueError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, OSError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
