"""Command-line pipeline: ingest, split, train, tune, eval, predict,
export-activations, replay, serve-device.

Progress goes to standard error; machine-readable results go to files
under the output directory (flag ``--out-dir``, or the ``MINDCTL_OUT``
environment variable, or the working directory). Every artifact-
producing run writes its resolved configuration beside its outputs so
it can be reproduced exactly.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure,
5 protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, device, evaluation, model, oa
from .errors import DataError, NumericError, PipelineError, ProtocolError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_PROTOCOL = 5

DEFAULT_RUNS = (2, 4, 6, 8, 10, 12, 14)

# Candidate values per tuned factor: l2, lr, width, layers, batches.
DEFAULT_LEVELS = (
    (0.002, 0.004, 0.006, 0.008),
    (0.005, 0.01, 0.015, 0.02),
    (16, 32, 48, 64),
    (5, 6, 7, 8),
    (1, 3, 6, 13),
)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get("MINDCTL_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, command: str, payload: dict) -> None:
    path = out / f"{command.replace('-', '_')}_config.json"
    path.write_text(json.dumps({"command": command, **payload},
                               indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_ingest(args) -> int:
    out = _out_dir(args)
    mapping = (
        dataset.load_mapping(args.mapping)
        if args.mapping
        else dataset.default_mapping()
    )
    runs = [int(r) for r in args.runs.split(",")]
    found = dataset.find_recordings(args.edf_dir)
    if not found:
        raise DataError(f"no recordings named like S001R04.edf under {args.edf_dir}")
    subjects = sorted(found)
    if args.subjects is not None:
        if len(subjects) < args.subjects:
            raise DataError(
                f"requested {args.subjects} subjects, found {len(subjects)}"
            )
        subjects = subjects[: args.subjects]

    parts = []
    for subject in subjects:
        samples = dataset.ingest_subject(
            found[subject], runs, mapping,
            cap=args.per_subject, zscore=args.zscore,
        )
        _log(f"subject {subject}: {len(samples)} samples")
        parts.append(samples)
    combined = dataset.SampleSet.concat(parts)
    table_path = out / args.name
    dataset.save_table(combined, table_path)
    _log(f"wrote {len(combined)} samples to {table_path}")

    _write_config(out, "ingest", {
        "edf_dir": str(args.edf_dir),
        "subjects": subjects,
        "runs": runs,
        "mapping": str(args.mapping) if args.mapping else "builtin-default",
        "per_subject": args.per_subject,
        "zscore": args.zscore,
        "output": str(table_path),
    })
    return EXIT_OK


def _cmd_split(args) -> int:
    out = _out_dir(args)
    samples = dataset.load_table(args.data)
    result = dataset.split(samples, args.n_b, shuffle_seed=args.shuffle_seed)
    dataset.save_table(result.train, out / "train.csv")
    dataset.save_table(result.test, out / "test.csv")
    _log(
        f"split {len(samples)} samples into {len(result.train)} train / "
        f"{len(result.test)} test (batch size {result.batch_size})"
    )
    _write_config(out, "split", {
        "data": str(args.data),
        "n_b": args.n_b,
        "shuffle_seed": args.shuffle_seed,
        "train": str(out / "train.csv"),
        "test": str(out / "test.csv"),
    })
    return EXIT_OK


_TRAIN_DEFAULTS = {
    "l2": 0.004,
    "lr": 0.005,
    "width": 64,
    "layers": 7,
    "n_b": 3,
    "seed": 0,
    "epochs": 300,
    "patience": 20,
    "eval_every": 1,
    "bptt": 100,
}


def _resolve_train_settings(args) -> dict:
    """Explicit flag > persisted config > built-in default."""
    from_config = {}
    if args.config:
        from_config = json.loads(Path(args.config).read_text())
    settings = {}
    for key, default in _TRAIN_DEFAULTS.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            settings[key] = flag_value
        elif key in from_config:
            settings[key] = from_config[key]
        else:
            settings[key] = default
    if args.data is None and "data" in from_config:
        args.data = from_config["data"]
    if args.data is None:
        raise DataError("no dataset given (flag --data or config entry 'data')")
    return settings


def _cmd_train(args) -> int:
    out = _out_dir(args)
    settings = _resolve_train_settings(args)
    hp = model.HyperParams(
        l2=settings["l2"], lr=settings["lr"], width=settings["width"],
        layers=settings["layers"], batches=settings["n_b"],
    )
    schedule = model.TrainingSchedule(
        max_epochs=settings["epochs"], patience=settings["patience"],
        eval_every=settings["eval_every"], bptt_window=settings["bptt"],
        seed=settings["seed"],
    )
    samples = dataset.load_table(args.data)
    splits = dataset.split(samples, hp.batches)
    net = model.build(hp, settings["seed"])
    _log(
        f"training {hp.layers}-layer model (width {hp.width}) on "
        f"{len(splits.train)} samples, {hp.batches} batches"
    )
    trained, history = model.train(net, splits, hp, schedule)
    checkpoint = out / "model.mctl"
    checkpoint.write_bytes(model.save(trained))
    model.save_history(history, out / "history.csv")
    best_acc = max(h[2] for h in history)
    _log(f"best test accuracy {best_acc:.4f} after {trained.epochs_run} epochs")

    _write_config(out, "train", {
        "data": str(args.data), **settings,
        "checkpoint": str(checkpoint),
    })
    return EXIT_OK


def _load_stub_accuracies(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "run,accuracy":
        raise DataError(f"{path}: expected header 'run,accuracy'")
    accuracies = [None] * (len(lines) - 1)
    for line in lines[1:]:
        run_text, acc_text = line.split(",")
        accuracies[int(run_text) - 1] = float(acc_text)
    return accuracies


def _cmd_tune(args) -> int:
    out = _out_dir(args)
    levels = DEFAULT_LEVELS
    if args.levels:
        raw = json.loads(Path(args.levels).read_text())
        try:
            levels = tuple(tuple(raw[name]) for name in oa.FACTOR_NAMES)
        except KeyError as exc:
            raise DataError(f"{args.levels}: missing factor {exc}")
    plan = oa.build_plan(levels)

    results_path = out / "results.csv"
    if args.accuracies_csv:
        results = _load_stub_accuracies(args.accuracies_csv)
        if any(a is None for a in results):
            raise DataError(f"{args.accuracies_csv}: missing run accuracies")
    else:
        if args.data is None:
            raise DataError("tune needs --data (or --accuracies-csv for a stub run)")
        samples = dataset.load_table(args.data)
        schedule_kwargs = dict(
            max_epochs=args.epochs, patience=args.patience,
            eval_every=args.eval_every, bptt_window=args.bptt, seed=args.seed,
        )

        def runner(values):
            l2, lr, width, layers, batches = values
            hp = model.HyperParams(
                l2=l2, lr=lr, width=int(width), layers=int(layers),
                batches=int(batches),
            )
            splits = dataset.split(samples, hp.batches)
            net = model.build(hp, args.seed)
            _, history = model.train(
                net, splits, hp, model.TrainingSchedule(**schedule_kwargs)
            )
            best = max(h[2] for h in history)
            _log(f"  run {values}: accuracy {best:.4f}")
            return best

        existing = None
        if results_path.exists():
            existing = oa.load_results(plan, results_path)
            done = sum(a is not None for a in existing)
            _log(f"resuming: {done} of {plan.n_runs} runs already recorded")
        results = oa.execute(plan, runner, workers=args.workers,
                             existing=existing)

    oa.save_plan(plan, results, results_path)
    analysis = oa.range_analysis(plan, results)
    oa.save_analysis(analysis, out / "analysis.csv")
    best = dict(zip(plan.factor_names, analysis.best_values))
    _log(f"best levels: {best}")

    summary = {"best": best, "savings": oa.savings(plan)}
    if not args.accuracies_csv and args.confirm:
        hp = model.HyperParams(
            l2=best["l2"], lr=best["lr"], width=int(best["width"]),
            layers=int(best["layers"]), batches=int(best["batches"]),
        )
        splits = dataset.split(dataset.load_table(args.data), hp.batches)
        net = model.build(hp, args.seed)
        trained, history = model.train(
            net, splits, hp, model.TrainingSchedule(**schedule_kwargs)
        )
        (out / "tuned_model.mctl").write_bytes(model.save(trained))
        summary["confirmation_accuracy"] = max(h[2] for h in history)
        _log(f"confirmation run accuracy {summary['confirmation_accuracy']:.4f}")
    (out / "best.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    _write_config(out, "tune", {
        "data": str(args.data) if args.data else None,
        "accuracies_csv": str(args.accuracies_csv) if args.accuracies_csv else None,
        "levels": {name: list(vals) for name, vals in zip(oa.FACTOR_NAMES, levels)},
        "seed": args.seed, "epochs": args.epochs, "patience": args.patience,
        "eval_every": args.eval_every, "bptt": args.bptt,
        "workers": args.workers, "confirm": args.confirm,
    })
    return EXIT_OK


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    net = model.load(Path(args.model).read_bytes())
    samples = dataset.load_table(args.data)
    predicted, scores = model.predict(net, samples.features)
    cm = evaluation.confusion(predicted, samples.labels)
    m = evaluation.metrics(cm)

    aucs = []
    for label in cm.class_labels:
        try:
            curve = evaluation.roc_auc(scores, samples.labels, label)
        except DataError:
            aucs.append(float("nan"))
            _log(f"class {label}: AUC undefined (missing positives or negatives)")
            continue
        aucs.append(curve.auc)
        evaluation.save_roc(curve, out / f"roc_class{label}.csv")
    m.auc = np.asarray(aucs)
    m.macro_auc = float(m.auc.mean()) if np.isfinite(m.auc).all() else None

    evaluation.save_report(cm, m, out / "report.csv")
    summary = {
        "accuracy": m.accuracy,
        "macro_precision": m.macro_precision,
        "macro_recall": m.macro_recall,
        "macro_f1": m.macro_f1,
        "macro_auc": m.macro_auc,
        "auc": [a if np.isfinite(a) else None for a in aucs],
    }

    if args.knn_train:
        knn_train = dataset.load_table(args.knn_train)
        knn_labels = evaluation.knn_classify(knn_train, samples.features,
                                             k=args.knn_k)
        summary["knn_accuracy"] = float((knn_labels == samples.labels).mean())
        _log(f"knn (k={args.knn_k}) accuracy {summary['knn_accuracy']:.4f}")

    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    _log(f"accuracy {m.accuracy:.4f}")

    _write_config(out, "eval", {
        "model": str(args.model), "data": str(args.data),
        "knn_train": str(args.knn_train) if args.knn_train else None,
        "knn_k": args.knn_k,
    })
    return EXIT_OK


def _cmd_predict(args) -> int:
    out = _out_dir(args)
    net = model.load(Path(args.model).read_bytes())
    samples = dataset.load_table(args.data)
    labels, scores = model.predict(net, samples.features)
    path = out / "predictions.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("label," + ",".join(f"score{c}" for c in range(1, 6)) + "\n")
        for label, row in zip(labels, scores):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")
    _log(f"wrote {len(labels)} predictions to {path}")
    _write_config(out, "predict", {
        "model": str(args.model), "data": str(args.data), "output": str(path),
    })
    return EXIT_OK


def _cmd_export_activations(args) -> int:
    out = _out_dir(args)
    net = model.load(Path(args.model).read_bytes())
    samples = dataset.load_table(args.data)
    table = model.export_activations(net, samples, args.layer)
    path = out / f"activations_layer{args.layer}.csv"
    model.save_activations(table, path)
    _log(f"wrote layer {args.layer} activations for {len(samples)} samples")
    _write_config(out, "export-activations", {
        "model": str(args.model), "data": str(args.data),
        "layer": args.layer, "output": str(path),
    })
    return EXIT_OK


def _cmd_replay(args) -> int:
    out = _out_dir(args)
    net = model.load(Path(args.model).read_bytes())
    samples = dataset.load_table(args.data)
    profile = device.PROFILES[args.profile]
    session = device.DeviceSession(profile)
    log = device.replay(net, samples, profile, session,
                        cadence=args.cadence, step_ms=args.step_ms)
    device.save_command_log(log, out / "command_log.csv")
    device.save_transcript(session.transcript, out / "transcript.csv")

    # decision-level match rate against the recorded labels
    truth = []
    labels = samples.labels
    for start in range(0, len(labels), args.cadence):
        window = labels[start : start + args.cadence]
        counts = {}
        for lbl in window:
            counts[int(lbl)] = counts.get(int(lbl), 0) + 1
        truth.append(max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0])
    matches = sum(1 for t, entry in zip(truth, log) if t == entry[2])
    rate = matches / len(log) if log else 0.0
    _log(f"replayed {len(log)} commands, match rate {rate:.4f}")
    (out / "replay_summary.json").write_text(
        json.dumps({"commands": len(log), "match_rate": rate},
                   indent=2, sort_keys=True) + "\n"
    )
    _write_config(out, "replay", {
        "model": str(args.model), "data": str(args.data),
        "profile": args.profile, "cadence": args.cadence,
        "step_ms": args.step_ms,
    })
    return EXIT_OK


def _cmd_serve_device(args) -> int:
    profile = device.PROFILES[args.profile]
    _log(f"serving {args.profile} device on {args.host}:{args.port}")
    if args.transcript:
        _write_config(Path(args.transcript).resolve().parent, "serve-device", {
            "host": args.host, "port": args.port, "profile": args.profile,
            "transcript": str(args.transcript), "once": args.once,
        })
    device.serve(
        args.host, args.port, profile,
        once=args.once,
        transcript_path=args.transcript,
        on_ready=lambda port: _log(f"listening on port {port}"),
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mindctl",
        description="EEG intent recognition pipeline and device simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="EDF recordings to a dataset table")
    p.add_argument("--edf-dir", required=True)
    p.add_argument("--runs", default=",".join(str(r) for r in DEFAULT_RUNS))
    p.add_argument("--mapping", help="label mapping JSON (default: builtin)")
    p.add_argument("--subjects", type=int, help="use the first N subjects")
    p.add_argument("--per-subject", type=int,
                   help="keep exactly N samples per subject")
    p.add_argument("--zscore", action="store_true",
                   help="per-channel standardization (off by default)")
    p.add_argument("--name", default="dataset.csv")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="partition a dataset table")
    p.add_argument("--data", required=True)
    p.add_argument("--n-b", type=int, required=True, dest="n_b",
                   help="training batch count; test share is 1/(n_b+1)")
    p.add_argument("--shuffle-seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train the intent model")
    p.add_argument("--data")
    p.add_argument("--config", help="re-run from a persisted train config")
    p.add_argument("--lambda", dest="l2", type=float, help="l2 penalty")
    p.add_argument("--lr", type=float)
    p.add_argument("--width", type=int, help="hidden layer width")
    p.add_argument("--layers", type=int, help="total layer count")
    p.add_argument("--n-b", dest="n_b", type=int, help="training batch count")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--bptt", type=int, help="truncation window")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tune", help="16-run orthogonal-array sweep")
    p.add_argument("--data")
    p.add_argument("--accuracies-csv",
                   help="stub objective: CSV of run,accuracy instead of training")
    p.add_argument("--levels", help="JSON file overriding factor level values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=1)
    p.add_argument("--bptt", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--confirm", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="retrain once at the selected best levels")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("eval", help="confusion matrix, metrics, ROC, baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--knn-train", help="train table for the knn baseline")
    p.add_argument("--knn-k", type=int, default=3)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="per-sample labels and scores")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("export-activations",
                       help="per-layer activation table for one layer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", type=int, required=True,
                   help="1-based topology position (1 = input)")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_export_activations)

    p = sub.add_parser("replay", help="drive the simulated device from EEG")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=sorted(device.PROFILES), required=True)
    p.add_argument("--cadence", type=int, default=1,
                   help="predictions per emitted command (majority vote)")
    p.add_argument("--step-ms", dest="step_ms", type=int, default=250)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("serve-device", help="run the device endpoint over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--profile", choices=sorted(device.PROFILES), required=True)
    p.add_argument("--transcript", help="CSV transcript path")
    p.add_argument("--once", action=argparse.BooleanOptionalAction, default=False,
                   help="exit after the first session")
    p.set_defaults(func=_cmd_serve_device)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ProtocolError as exc:
        _log(f"protocol error: {exc}")
        return EXIT_PROTOCOL
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (DataError, PipelineError, OSError, ValueError, IndexError,
            KeyError, json.JSONDecodeError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
