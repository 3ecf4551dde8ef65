"""Command-line entry point: ``cric {generate,train,ratio-check,eval,experiment}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import SemConfig, allocate, generate_sem, load_csv, save_csv
from .errors import ConfigError, CricError, DataError
from .harness import (ExperimentConfig, ExperimentResult, emit_results, evaluate,
                      parse_method, run_experiment)
from .learners import TrainConfig, train
from .ratio import ClassifierConfig, fit_ratio_model, ratio_diagnostics

log = logging.getLogger("cric")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(doc, out) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ratio_mode(text: str) -> str:
    return text.replace("-", "_")


def cmd_generate(args) -> None:
    scales = args.env_scales
    if args.n_total is not None:
        n = allocate(args.n_total, len(scales))
    else:
        n = args.n_per_env
    cfg = SemConfig.for_setting(args.setting, scales, n, seed=args.seed,
                                dim_x1=args.dim_x1, dim_x2=args.dim_x2)
    data = generate_sem(cfg)
    if args.out is None:
        raise ConfigError("generate needs --out")
    save_csv(data, args.out)
    log.info("wrote %d environments, d=%d to %s", len(data), data.feature_dim, args.out)


def cmd_train(args) -> None:
    data = load_csv(args.dataset, args.env_column, args.target_column)
    cfg = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    overrides = {"lam": args.lam, "epochs": args.epochs, "seed": args.seed}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    p = train(parse_method(args.method), data, cfg)
    if args.out is None:
        _write_json(p.to_dict(), None)
    else:
        p.save(args.out)


def cmd_ratio_check(args) -> None:
    data = load_csv(args.dataset, args.env_column, args.target_column)
    model = fit_ratio_model(data, args.ratio_mode, ClassifierConfig(clip_epsilon=args.clip_epsilon))
    if args.save_model:
        model.save(args.save_model)
    _write_json(ratio_diagnostics(model, data), args.out)


def cmd_eval(args) -> None:
    report, extra = evaluate(
        args.dataset, args.predictor, args.baseline, ratio_mode=args.ratio_mode,
        weight_normalized=args.normalize_weights, env_column=args.env_column,
        target_column=args.target_column, ratio_model_path=args.ratio_model,
        classifier=ClassifierConfig(clip_epsilon=args.clip_epsilon), theta=args.theta)
    _write_json({**report.to_dict(), **extra}, args.out)


def cmd_experiment(args) -> None:
    doc = _read_json(args.config)
    settings = doc.pop("settings", None)
    if settings is None:
        settings = [doc.pop("setting", "FOU")]
    elif "setting" in doc:
        raise ConfigError("give either 'setting' or 'settings', not both")
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.normalize_weights:
        doc["weight_normalized"] = True
    if args.ratio_mode is not None:
        doc["ratio_mode"] = args.ratio_mode
    if args.lam is not None or args.epochs is not None:
        tc = dict(doc.get("train_cfg") or {})
        for m in ("erm", "irmv1", "vrex"):
            entry = dict(tc.get(m) or {})
            if args.lam is not None and m != "erm":
                entry["lambda"] = args.lam
            if args.epochs is not None:
                entry["epochs"] = args.epochs
            tc[m] = entry
        doc["train_cfg"] = tc
    if args.out is None:
        raise ConfigError("experiment needs --out DIR")
    result = ExperimentResult()
    for s in settings:
        cfg = ExperimentConfig.from_dict({**doc, "setting": s})
        log.info("running %s: %d replicates of %s", cfg.setting.value, cfg.replicates,
                 ", ".join(cfg.methods))
        result.extend(run_experiment(cfg))
    for p in emit_results(result, args.out):
        log.info("wrote %s", p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cric", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("dataset", help="CSV file: env column, target column, feature columns")
        p.add_argument("--env-column", default="env")
        p.add_argument("--target-column", default="y")

    def ratio_args(p, default="classifier"):
        p.add_argument("--ratio-mode", type=_ratio_mode, default=default,
                       choices=["classifier", "exact_gaussian"],
                       help="classifier | exact-gaussian")
        p.add_argument("--clip-epsilon", type=float, default=1e-3)

    g = sub.add_parser("generate", help="sample the linear SEM to CSV")
    g.add_argument("--setting", default="FOU", choices=["POU", "PEU", "FOU", "FEU"])
    g.add_argument("--env-scales", type=_floats, default=[0.2, 2.0, 5.0])
    size = g.add_mutually_exclusive_group()
    size.add_argument("--n-per-env", type=int, default=300)
    size.add_argument("--n-total", type=int)
    g.add_argument("--dim-x1", type=int, default=5)
    g.add_argument("--dim-x2", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a predictor, write it as JSON")
    data_args(t)
    t.add_argument("--method", required=True, help="erm | irmv1 | vrex")
    t.add_argument("--config", help="TrainConfig JSON")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("ratio-check", help="fit ratios and report weight diagnostics")
    data_args(r)
    ratio_args(r)
    r.add_argument("--save-model", help="also write the fitted ratio model JSON here")
    r.add_argument("--out")
    r.set_defaults(func=cmd_ratio_check)

    e = sub.add_parser("eval", help="CRIC of a predictor against an ERM baseline")
    data_args(e)
    e.add_argument("--predictor", required=True)
    e.add_argument("--baseline", required=True)
    e.add_argument("--ratio-model", help="reuse a saved ratio model instead of fitting one")
    ratio_args(e)
    e.add_argument("--normalize-weights", action="store_true")
    e.add_argument("--theta", type=float, help="also report error + theta * Q-hat")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run the SEM benchmark from a JSON config")
    x.add_argument("config")
    x.add_argument("--out")
    x.add_argument("--seed", type=int)
    x.add_argument("--ratio-mode", type=_ratio_mode, choices=["classifier", "exact_gaussian"])
    x.add_argument("--normalize-weights", action="store_true")
    x.add_argument("--lambda", dest="lam", type=float)
    x.add_argument("--epochs", type=int)
    x.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else ConfigError.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CricError as exc:
        print(f"cric: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"cric: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
