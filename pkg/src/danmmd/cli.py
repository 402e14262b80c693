"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 file/IO error.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import gen_gaussians, gen_moons, read_csv, write_csv, write_features_csv
from .diagnostics import SCHEMA_VERSION, MKMMDTest, a_distance_summary
from .exceptions import DanError, InputError, NumericError, ParseError, SolverError
from .network import checkpoint_bytes, specs_as_dicts
from .trainer import (LAMBDA_GRID, AdaptationConfig, AdaptationTask, TrainingDiverged, Variant,
                      build_network, forward, train)
from .experiments import best_lambda, sweep_lambda

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SEED_ENV = "DANMMD_SEED"

logger = logging.getLogger("danmmd")


class UsageError(Exception):
    pass


def _default_seed():
    return int(os.environ.get(SEED_ENV, "0"))


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _means(text):
    try:
        return [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y;x,y', got {text!r}") from None


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------- gen

def cmd_gen(args):
    if args.kind == "moons":
        src = gen_moons(args.n, args.noise, 0.0, seed=args.seed * 2, domain_tag="source")
        tgt = gen_moons(args.n, args.noise, args.rotation, seed=args.seed * 2 + 1, domain_tag="target")
    else:
        means = args.means or [[0.0, 0.0], [3.0, 3.0]]
        shift = args.shift or [0.0] * len(means[0])
        src, tgt = gen_gaussians(args.n, means, args.sigma, shift, args.seed)
    write_csv(src, args.out[0])
    write_csv(tgt, args.out[1])
    return EXIT_OK


# ---------------------------------------------------------------------- mmd-test

def cmd_mmd_test(args):
    src = read_csv(args.source)
    tgt = read_csv(args.target)
    test = MKMMDTest(kernels=args.kernels, select_beta=args.select_beta,
                     n_permutations=args.permutations, alpha=args.alpha, seed=args.seed)
    test.fit(src.features, tgt.features)
    out = test.to_dict()
    out["source"] = str(args.source)
    out["target"] = str(args.target)
    sys.stdout.write(_dump_json(out))
    return EXIT_OK


# ------------------------------------------------------------------------- train

def parse_variant(text):
    text = text.strip().lower()
    if text in ("source-only", "source_only"):
        return Variant.SOURCE_ONLY, None
    if text == "dan":
        return Variant.DAN, None
    if text in ("dan-sk", "dan_sk", "dan_single_kernel"):
        return Variant.DAN_SINGLE_KERNEL, None
    if text.startswith("dan-layer="):
        try:
            return Variant.DAN_SINGLE_LAYER, int(text.split("=", 1)[1])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"unknown variant {text!r}")


def _load_task(args):
    source = read_csv(args.source)
    target = read_csv(args.target)
    labeled = read_csv(args.target_labeled) if getattr(args, "target_labeled", None) else None
    return AdaptationTask(source, target, labeled)


def _config_from_args(args, lam=None):
    variant, layer = args.variant
    return AdaptationConfig(
        adapted_layers=args.layers, lam=args.lam if lam is None else lam,
        batch_size=args.batch_size, beta_update_period=args.beta_period, epochs=args.epochs,
        seed=args.seed, variant=variant, single_layer=layer, base_lr=args.lr,
        momentum=args.momentum,
    )


def write_history(history, path):
    cols = history.columns()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for rec in history.records:
            writer.writerow([_fmt(rec[c]) for c in cols])


def _manifest(args, config, network, task):
    inputs = {"source": str(args.source), "target": str(args.target)}
    if args.target_labeled:
        inputs["target_labeled"] = str(args.target_labeled)
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "train",
        "config": config.as_dict(),
        "seed": config.seed,
        "hidden": list(args.hidden),
        "layers": specs_as_dicts(network.specs),
        "inputs": inputs,
        "input_sha256": {k: _sha256(v) for k, v in inputs.items()},
        "class_count": task.class_count,
        "versions": {"danmmd": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def _summary(history, status):
    final = history.final() or {}
    return {
        "schema_version": SCHEMA_VERSION,
        "status": status,
        "epochs_completed": len(history),
        "source_acc": final.get("source_acc"),
        "target_acc": final.get("target_acc"),
        "classification_loss": final.get("classification_loss"),
    }


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_train(args):
    task = _load_task(args)
    config = _config_from_args(args)
    network = build_network(task, args.hidden, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(_dump_json(_manifest(args, config, network, task)),
                                       encoding="utf-8")
    status, code = "ok", EXIT_OK
    try:
        result = train(network, task, config)
        network, history = result.network, result.history
    except TrainingDiverged as exc:
        network, history = exc.network, exc.history
        status, code = f"diverged: {exc}", EXIT_NUMERIC
    write_history(history, out / "history.csv")
    (out / "checkpoint.bin").write_bytes(checkpoint_bytes(network))
    summary = _summary(history, status)
    (out / "summary.json").write_text(_dump_json(_json_safe(summary)), encoding="utf-8")
    if code == EXIT_OK:
        hid_s = forward(network, task.source.features)[0]
        hid_t = forward(network, task.target_unlabeled.features)[0]
        for layer in range(network.n_layers):
            write_features_csv(hid_s[layer], out / f"features_source_layer{layer}.csv",
                               task.source.labels)
            write_features_csv(hid_t[layer], out / f"features_target_layer{layer}.csv",
                               task.target_unlabeled.labels)
    sys.stdout.write(_dump_json(_json_safe(summary)))
    return code


# ------------------------------------------------------------------ sweep-lambda

def cmd_sweep_lambda(args):
    task = _load_task(args)
    config = _config_from_args(args, lam=1.0)
    rows = sweep_lambda(task, config, args.seeds, args.lambdas, args.hidden)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["lambda", "mean_target_acc", "std_target_acc", "mean_selection_score",
                "n_runs", "n_failed"]
        writer.writerow(cols)
        for row in rows:
            rec = row.as_dict()
            writer.writerow([_fmt(rec[c]) for c in cols])
    report = {
        "schema_version": SCHEMA_VERSION,
        "rows": [row.as_dict() for row in rows],
        "best_lambda_by_score": best_lambda(rows, "score") if any(r.scores for r in rows) else None,
        "seeds": list(args.seeds),
    }
    if any(r.target_accs for r in rows):
        report["best_lambda_by_target_acc"] = best_lambda(rows, "target_acc")
    sys.stdout.write(_dump_json(_json_safe(report)))
    return EXIT_NUMERIC if any(r.failed for r in rows) else EXIT_OK


# ------------------------------------------------------------------------- adist

def cmd_adist(args):
    a = read_csv(args.features_a)
    b = read_csv(args.features_b)
    if a.n_features != b.n_features:
        raise InputError(f"feature widths differ: {a.n_features} vs {b.n_features}")
    seeds = list(range(args.seed, args.seed + args.seeds))
    out = {"schema_version": SCHEMA_VERSION, "features_a": str(args.features_a),
           "features_b": str(args.features_b), **a_distance_summary(a.features, b.features, seeds)}
    sys.stdout.write(_dump_json(out))
    return EXIT_OK


# ------------------------------------------------------------------------ parser

def _add_train_flags(p, with_lambda=True):
    p.add_argument("--source", required=True, type=Path)
    p.add_argument("--target", required=True, type=Path)
    p.add_argument("--target-labeled", type=Path, default=None)
    p.add_argument("--variant", type=parse_variant, default=(Variant.DAN, None),
                   help="source-only | dan | dan-sk | dan-layer=K")
    if with_lambda:
        p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--layers", type=_ints, default=None,
                   help="adapted layer indices, e.g. 0,1,2 (default: last two hidden + classifier)")
    p.add_argument("--hidden", type=_ints, default=[16, 16])
    p.add_argument("--epochs", type=int, default=AdaptationConfig.epochs)
    p.add_argument("--batch-size", type=int, default=AdaptationConfig.batch_size)
    p.add_argument("--lr", type=float, default=AdaptationConfig.base_lr)
    p.add_argument("--momentum", type=float, default=AdaptationConfig.momentum)
    p.add_argument("--beta-period", type=int, default=AdaptationConfig.beta_update_period)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="danmmd", description="MK-MMD two-sample tests and layerwise MMD domain adaptation.")
    parser.add_argument("--version", action="version", version=f"danmmd {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic source/target pair")
    p.add_argument("--kind", choices=["moons", "gaussians"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--rotation", type=float, default=0.0, help="target rotation in degrees (moons)")
    p.add_argument("--noise", type=float, default=0.1, help="moons noise sigma")
    p.add_argument("--shift", type=_floats, default=None, help="target mean shift (gaussians)")
    p.add_argument("--means", type=_means, default=None, help="class means 'x,y;x,y' (gaussians)")
    p.add_argument("--sigma", type=float, default=1.0, help="shared class sigma (gaussians)")
    p.add_argument("--out", nargs=2, required=True, metavar=("SOURCE_CSV", "TARGET_CSV"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mmd-test", help="MK-MMD permutation two-sample test")
    p.add_argument("--source", required=True, type=Path)
    p.add_argument("--target", required=True, type=Path)
    p.add_argument("--kernels", choices=["median", "grid"], default="median")
    p.add_argument("--select-beta", action="store_true")
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_mmd_test)

    p = sub.add_parser("train", help="train one adaptation run")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-lambda", help="lambda sensitivity sweep")
    _add_train_flags(p, with_lambda=False)
    p.add_argument("--lambdas", type=_floats, default=list(LAMBDA_GRID))
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_sweep_lambda, seed=0)

    p = sub.add_parser("adist", help="proxy A-distance between two feature files")
    p.add_argument("--features-a", required=True, type=Path)
    p.add_argument("--features-b", required=True, type=Path)
    p.add_argument("--seeds", type=int, default=10, help="number of split seeds")
    p.add_argument("--seed", type=int, default=_default_seed(), help="first split seed")
    p.set_defaults(func=cmd_adist)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, OSError) as exc:
        print(f"danmmd: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, SolverError) as exc:
        print(f"danmmd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DanError as exc:
        print(f"danmmd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
