"""Command-line interface: ``kdsm {sigmas,train,score,eval,theory-check}``.

Exit codes: 0 success, 2 input error, 3 numeric error, 4 failed theory check.
Every command writes a ``<command>.manifest.json`` next to its outputs.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import theory
from .datasets import read_csv, write_csv
from .errors import InvalidInputError, KDSMError, NumericError
from .marginal_stats import compute_feature_stats
from .metrics import LabeledDataset, evaluate, semi_supervised_split, unsupervised_split
from .noise_scale import RULES, make_noise_plan
from .training import TrainConfig, TrainedModel, anomaly_score, fit, score_with_teacher

log = logging.getLogger("kdsm")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_THEORY = 4
OUTPUT_ENV = "KDSM_OUTPUT_DIR"

TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
SIGMA_KEYS = ("rule", "sigma_base", "c", "clip_min", "clip_max", "tau", "bins")


class TheoryCheckFailed(Exception):
    pass


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Dashes in keys become underscores."""
    if path is None:
        return {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}: line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(name, raw):
    if not isinstance(raw, str):
        return raw
    kind = TRAIN_FIELDS[name].type
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise InvalidInputError(f"bad value for {name}: {raw!r}") from None
    return raw


def resolve_config(args, keys):
    """Flag > config file > built-in default, for each key in ``keys``."""
    from_file = read_config(args.config)
    unknown = sorted(set(from_file) - set(TRAIN_FIELDS))
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
        elif key in from_file:
            values[key] = _coerce(key, from_file[key])
        else:
            values[key] = TRAIN_FIELDS[key].default
    if "rule" in values and values["rule"] not in RULES:
        raise InvalidInputError(f"rule must be one of {RULES}, got {values['rule']!r}")
    return values


def output_dir(args):
    if getattr(args, "out_dir", None):
        path = Path(args.out_dir)
    elif os.environ.get(OUTPUT_ENV):
        path = Path(os.environ[OUTPUT_ENV])
    else:
        path = Path(".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, command, config, seed, inputs, outputs, start):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_seconds": time.perf_counter() - start,
        "sha256": {str(p): sha256_file(p) for p in outputs},
    }
    path = Path(directory) / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _json_dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_sigmas(args, start):
    cfg = resolve_config(args, SIGMA_KEYS)
    X, _, names = read_csv(args.input)
    stats = compute_feature_stats(X, cfg["bins"])
    plan = make_noise_plan(stats, rule=cfg["rule"], sigma_base=cfg["sigma_base"], c=cfg["c"],
                           clip=(cfg["clip_min"], cfg["clip_max"]), tau=cfg["tau"],
                           bins=cfg["bins"])
    out = output_dir(args)
    target = Path(args.output) if args.output else out / "noise_plan.json"
    record = plan.to_dict()
    record["features"] = names
    _json_dump(target, record)
    for name, s in zip(names, plan.sigmas):
        print(f"{name}\t{float(s)!r}")
    write_manifest(target.parent, "sigmas", cfg, None, [args.input], [target], start)


def cmd_train(args, start):
    cfg = TrainConfig(**resolve_config(args, TRAIN_FIELDS))
    X, y, names = read_csv(args.input)
    model_dir = Path(args.model_dir) if args.model_dir else output_dir(args) / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    if y is not None:
        ds = LabeledDataset(X, y, name=Path(args.input).stem)
        if args.unsupervised:
            X_train, test = unsupervised_split(ds, cfg.seed)
        else:
            X_train, test = semi_supervised_split(ds, cfg.seed)
        test_path = model_dir / "test.csv"
        write_csv(test_path, test.X, test.y, names)
        outputs.append(test_path)
    else:
        X_train = X
    model = fit(X_train, cfg)
    outputs = model.save(model_dir) + outputs
    print(f"trained {cfg.epochs} epochs on {X_train.shape[0]} rows; "
          f"final loss {model.loss_history[-1]:.6f}; model in {model_dir}")
    write_manifest(model_dir, "train", cfg.to_dict(), cfg.seed, [args.input], outputs, start)


def cmd_score(args, start):
    model = TrainedModel.load(args.model_dir)
    X, y, _ = read_csv(args.input)
    if X.shape[1] != model.net.arch.input_dim:
        raise InvalidInputError(
            f"model expects {model.net.arch.input_dim} features, {args.input} has {X.shape[1]}")
    scores = (score_with_teacher if args.teacher else anomaly_score)(model, X)
    target = Path(args.output) if args.output else output_dir(args) / "scores.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_csv(target, scores[:, None], y, ["score"])
    write_manifest(target.parent, "score", {"teacher": args.teacher, "model_dir": str(args.model_dir)},
                   model.config.seed, [args.input, args.model_dir], [target], start)


def _load_labels(path):
    X, y, names = read_csv(path)
    if y is not None:
        return y
    if X.shape[1] == 1:
        labels = X[:, 0]
        if np.all((labels == 0) | (labels == 1)):
            return labels.astype(np.int64)
    raise InvalidInputError(f"{path}: no 'label' column")


def cmd_eval(args, start):
    X, y, names = read_csv(args.scores)
    col = names.index("score") if "score" in names else 0
    scores = X[:, col]
    if args.labels:
        y = _load_labels(args.labels)
    if y is None:
        raise InvalidInputError("no labels: pass --labels or include a 'label' column")
    report = evaluate(scores, y, seed=args.seed, split=args.split)
    target = Path(args.output) if args.output else output_dir(args) / "report.json"
    target.write_text(report.to_json())
    print(f"AUC-ROC {report.auc_roc:.4f}  AUC-PR {report.auc_pr:.4f}  F1 {report.f1:.4f}")
    inputs = [args.scores] + ([args.labels] if args.labels else [])
    write_manifest(target.parent, "eval", {"split": args.split}, args.seed, inputs, [target], start)


def parse_grid(text):
    """``a,b,c`` or ``lo:hi:n`` (inclusive linspace)."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return tuple(float(v) for v in np.linspace(float(lo), float(hi), int(n)))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def cmd_theory_check(args, start):
    if any(not 0.0 < t < 0.5 for t in args.tau_grid):
        raise InvalidInputError("tau grid must lie in (0, 0.5)")
    if any(not 1.9 <= k <= 50.0 for k in args.kappa_grid):
        raise InvalidInputError("kappa grid must lie in [1.9, 50]")
    if any(not 0.0 < a < 1.0 for a in args.alpha_grid):
        raise InvalidInputError("alpha grid must lie in (0, 1)")
    if any(not nu > 4.0 for nu in args.nu_grid):
        raise InvalidInputError("nu grid must be > 4")
    report, timings = theory.run_theory_checks(args.tau_grid, args.kappa_grid, args.alpha_grid,
                                               args.nu_grid)
    for name, secs in timings.items():
        log.debug("%s took %.3f s", name, secs)
    target = Path(args.output) if args.output else output_dir(args) / "theory_report.json"
    _json_dump(target, theory.report_to_jsonable(report))
    for check in report["checks"]:
        print(f"{'PASS' if check['passed'] else 'FAIL'}  {check['name']}")
    grids = {"tau_grid": list(args.tau_grid), "kappa_grid": list(args.kappa_grid),
             "alpha_grid": list(args.alpha_grid), "nu_grid": list(args.nu_grid)}
    write_manifest(target.parent, "theory-check", grids, None, [], [target], start)
    if not report["passed"]:
        raise TheoryCheckFailed("one or more theory checks failed")


def _add_common(p):
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--config", help="flat key = value file; flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_sigma_flags(p):
    p.add_argument("--rule", choices=RULES)
    p.add_argument("--sigma-base", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--clip-min", type=float)
    p.add_argument("--clip-max", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--bins", type=int, help="histogram bins; 0 = Freedman-Diaconis")


def build_parser():
    parser = argparse.ArgumentParser(prog="kdsm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sigmas", help="per-feature noise scales for a CSV")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_sigma_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_sigmas)

    p = sub.add_parser("train", help="train a score network")
    p.add_argument("input")
    p.add_argument("--model-dir")
    p.add_argument("--unsupervised", action="store_true",
                   help="bootstrap training rows from the full labelled file")
    _add_sigma_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ema", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rho", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--main-width", type=int)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--dropout1", type=float)
    p.add_argument("--dropout2", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="anomaly scores for a CSV")
    p.add_argument("model_dir")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--teacher", action="store_true", help="score with the EMA weights")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUC-ROC, AUC-PR and F1 for a scores file")
    p.add_argument("scores")
    p.add_argument("--labels", help="CSV with a label column (default: label column of scores)")
    p.add_argument("-o", "--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--split")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theory-check", help="numerical checks of the tail-radius results")
    p.add_argument("--tau-grid", type=parse_grid, default=theory.DEFAULT_TAU_GRID)
    p.add_argument("--kappa-grid", type=parse_grid, default=theory.DEFAULT_KAPPA_GRID)
    p.add_argument("--alpha-grid", type=parse_grid, default=theory.DEFAULT_ALPHA_GRID)
    p.add_argument("--nu-grid", type=parse_grid, default=theory.DEFAULT_NU_GRID)
    p.add_argument("-o", "--output")
    _add_common(p)
    p.set_defaults(func=cmd_theory_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        args.func(args, start)
    except TheoryCheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THEORY
    except NumericError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"numeric error{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KDSMError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
