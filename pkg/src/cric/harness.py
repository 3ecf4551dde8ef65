"""SEM benchmark runs, CSV evaluation and result emission.

Seeds: replicate ``r`` of a run with ``base_seed`` uses
``derive_seed(base_seed, r, role)`` for ``role`` in ``weights`` (the
confounding weights of P settings, shared by train and test), ``train`` and
``test``.  Replicates never share or consume each other's streams, so their
results do not depend on execution order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .criterion import CricReport, cric, integrated_criterion
from .data import (MultiEnvDataset, SemConfig, Setting, allocate, generate_sem,
                   load_csv, parse_setting)
from .errors import ConfigError, CricError, DataError
from .learners import Predictor, TrainConfig, risk, train
from .ratio import ClassifierConfig, RatioModel, fit_ratio_model, parse_mode
from .seeding import derive_seed

METHODS = ("erm", "irmv1", "vrex")
METHOD_ALIASES = {"erm": "erm", "irm": "irmv1", "irmv1": "irmv1", "vrex": "vrex",
                  "rex": "vrex", "rexv": "vrex"}


def parse_method(name: str) -> str:
    key = str(name).lower().replace("-", "").replace("_", "")
    try:
        return METHOD_ALIASES[key]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    setting: Setting = Setting.FOU
    env_scales: tuple[float, ...] = (0.2, 2.0, 5.0)
    n_train: int = 800
    n_test: int = 500
    methods: tuple[str, ...] = ("irmv1", "vrex")
    replicates: int = 10
    train_cfg: dict = field(default_factory=dict)   # method -> TrainConfig
    ratio_mode: str = "classifier"
    weight_normalized: bool = False
    base_seed: int = 0
    test_env_scales: tuple[float, ...] | None = None  # None: test on the training scales
    dim_x1: int = 5
    dim_x2: int = 5
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        object.__setattr__(self, "setting", parse_setting(self.setting))
        methods = tuple(dict.fromkeys(parse_method(m) for m in self.methods))
        if not methods:
            raise ConfigError("methods must be non-empty")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "ratio_mode", parse_mode(self.ratio_mode))
        object.__setattr__(self, "env_scales", tuple(float(e) for e in self.env_scales))
        if self.test_env_scales is not None:
            object.__setattr__(self, "test_env_scales", tuple(float(e) for e in self.test_env_scales))
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if len(self.env_scales) < 2:
            raise ConfigError("CRIC needs at least two environments")
        for name in ("n_train", "n_test"):
            k = len(self.env_scales if name == "n_train" else self.test_scales)
            if getattr(self, name) < 2 * k:
                raise ConfigError(f"{name} must give every environment at least 2 samples")
        cfgs = {}
        for m, c in dict(self.train_cfg).items():
            cfgs[parse_method(m)] = c if isinstance(c, TrainConfig) else TrainConfig.from_dict(c)
        object.__setattr__(self, "train_cfg", cfgs)

    @property
    def test_scales(self) -> tuple[float, ...]:
        return self.test_env_scales if self.test_env_scales is not None else self.env_scales

    def train_config(self, method: str) -> TrainConfig:
        return self.train_cfg.get(method, TrainConfig())

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "classifier" in doc and isinstance(doc["classifier"], dict):
            doc["classifier"] = ClassifierConfig(**doc["classifier"])
        for key in ("env_scales", "methods", "test_env_scales"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "setting": self.setting.value,
            "env_scales": list(self.env_scales),
            "test_env_scales": None if self.test_env_scales is None else list(self.test_env_scales),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "methods": list(self.methods),
            "replicates": self.replicates,
            "train_cfg": {m: self.train_config(m).to_dict() for m in ("erm", *self.methods)},
            "ratio_mode": self.ratio_mode,
            "weight_normalized": self.weight_normalized,
            "base_seed": self.base_seed,
            "dim_x1": self.dim_x1,
            "dim_x2": self.dim_x2,
            "classifier": vars(self.classifier).copy(),
        }


@dataclass(frozen=True)
class ResultRow:
    replicate: int
    setting: str
    method: str
    split: str
    q_hat: float
    log10_q_hat: float
    numerator: float
    denominator: float
    risks: dict


@dataclass
class ExperimentResult:
    rows: list[ResultRow] = field(default_factory=list)
    q_table: list[dict] = field(default_factory=list)
    configs: list[dict] = field(default_factory=list)

    def extend(self, other: "ExperimentResult") -> "ExperimentResult":
        self.rows.extend(other.rows)
        self.q_table.extend(other.q_table)
        self.configs.extend(other.configs)
        return self

    def select(self, **match) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]


def replicate_data(cfg: ExperimentConfig, r: int) -> tuple[MultiEnvDataset, MultiEnvDataset]:
    weight_seed = derive_seed(cfg.base_seed, r, "weights")
    common = dict(dim_x1=cfg.dim_x1, dim_x2=cfg.dim_x2, weight_seed=weight_seed)
    train_cfg = SemConfig.for_setting(cfg.setting, cfg.env_scales,
                                      allocate(cfg.n_train, len(cfg.env_scales)),
                                      seed=derive_seed(cfg.base_seed, r, "train"), **common)
    test_cfg = SemConfig.for_setting(cfg.setting, cfg.test_scales,
                                     allocate(cfg.n_test, len(cfg.test_scales)),
                                     seed=derive_seed(cfg.base_seed, r, "test"), **common)
    return generate_sem(train_cfg), generate_sem(test_cfg)


def _annotate(exc: CricError, where: str) -> CricError:
    if exc.args:
        exc.args = (f"[{where}] {exc.args[0]}",) + exc.args[1:]
    return exc


def run_replicate(cfg: ExperimentConfig, r: int) -> ExperimentResult:
    train_data, test_data = replicate_data(cfg, r)
    predictors = {}
    for m in ("erm", *cfg.methods):
        if m in predictors:
            continue
        try:
            predictors[m] = train(m, train_data, cfg.train_config(m))
        except CricError as exc:
            raise _annotate(exc, f"replicate {r}, method {m}")
    baseline = predictors["erm"]

    out = ExperimentResult()
    for split, data in (("train", train_data), ("test", test_data)):
        try:
            ratio = fit_ratio_model(data, cfg.ratio_mode, cfg.classifier)
        except CricError as exc:
            raise _annotate(exc, f"replicate {r}, {split} ratio fit")
        for m in cfg.methods:
            p = predictors[m]
            try:
                rep = cric(p, baseline, ratio, data, cfg.weight_normalized)
            except CricError as exc:
                raise _annotate(exc, f"replicate {r}, method {m}, {split}")
            out.rows.append(ResultRow(
                r, cfg.setting.value, m, split, rep.q_hat, rep.log10_q_hat,
                rep.numerator, rep.denominator,
                {e: risk(p, env) for e, env in data.items()}))
            for s in rep.pair_stats_phi:
                out.q_table.append({
                    "replicate": r, "setting": cfg.setting.value, "method": m, "split": split,
                    "e": s.e, "e_prime": s.e_prime, "q_cross": s.q_cross, "q_self": s.q_self,
                })
    return out


def run_experiment(cfg: ExperimentConfig, replicates: Sequence[int] | None = None) -> ExperimentResult:
    """Run the benchmark protocol for one setting; rows come in replicate order."""
    result = ExperimentResult(configs=[cfg.to_dict()])
    for r in (range(cfg.replicates) if replicates is None else replicates):
        result.extend(run_replicate(cfg, r))
    return result


# --------------------------------------------------------------------------- emission


def _num(v: float) -> str:
    return repr(float(v))


def _stats(values) -> dict:
    """Mean, population std (ddof=0) and median; non-finite summaries become null."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0, "mean": None, "std": None, "median": None}
    with np.errstate(invalid="ignore"):
        out = {"mean": float(np.mean(v)), "std": float(np.std(v)), "median": float(np.median(v))}
    return {"n": int(v.size), **{k: (x if math.isfinite(x) else None) for k, x in out.items()}}


def summarize(result: ExperimentResult) -> dict:
    groups: dict = {}
    for row in result.rows:
        groups.setdefault((row.setting, row.method, row.split), []).append(row)
    cric_summary = [
        {"setting": s, "method": m, "split": sp,
         "q_hat": _stats([r.q_hat for r in rows]),
         "log10_q_hat": _stats([r.log10_q_hat for r in rows])}
        for (s, m, sp), rows in groups.items()
    ]
    qgroups: dict = {}
    for q in result.q_table:
        qgroups.setdefault((q["setting"], q["method"], q["split"]), []).append(q["q_cross"])
    q_summary = [
        {"setting": s, "method": m, "split": sp, "q_cross": _stats(v)}
        for (s, m, sp), v in qgroups.items()
    ]
    return {
        "conventions": {
            "std": "population standard deviation (ddof=0)",
            "median": "median over replicates",
            "q_cross": "pooled over all ordered environment pairs and replicates",
            "log10_q_hat": "null where a summary is not finite (Q-hat = 0 gives -inf)",
        },
        "cric": cric_summary,
        "q_cross": q_summary,
    }


def emit_results(result: ExperimentResult, out_dir) -> list[Path]:
    """Write ``results.csv``, ``q_table.json`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "results.csv", out / "q_table.json", out / "summary.json"]
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "setting", "method", "split", "q_hat", "log10_q_hat",
                    "numerator", "denominator", "risks"])
        for r in result.rows:
            w.writerow([r.replicate, r.setting, r.method, r.split, _num(r.q_hat),
                        _num(r.log10_q_hat), _num(r.numerator), _num(r.denominator),
                        ";".join(f"{e}={_num(v)}" for e, v in r.risks.items())])
    paths[1].write_text(json.dumps(result.q_table, indent=2) + "\n", encoding="utf-8")
    summary = summarize(result)
    summary["configs"] = result.configs
    paths[2].write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return paths


# --------------------------------------------------------------------------- CSV evaluation


def evaluate(dataset_path, predictor_path, baseline_path, *, ratio_mode: str = "classifier",
             weight_normalized: bool = False, env_column: str = "env", target_column: str = "y",
             ratio_model_path=None, classifier: ClassifierConfig | None = None,
             theta: float | None = None) -> tuple[CricReport, dict]:
    """CRIC of a serialized predictor against a serialized ERM baseline on a CSV dataset.

    Ratios are fitted on the dataset unless a saved ratio model is given.
    Returns the report and extra fields (pooled prediction error and, when
    ``theta`` is given, the integrated criterion).
    """
    data = load_csv(dataset_path, env_column, target_column)
    p = Predictor.load(predictor_path)
    b = Predictor.load(baseline_path)
    for name, pred in (("predictor", p), ("baseline", b)):
        if pred.input_dim != data.feature_dim:
            raise DataError(f"{name} expects {pred.input_dim} features but the dataset has "
                            f"{data.feature_dim}")
    if len(data) < 2:
        raise DataError(f"CRIC needs at least 2 environments; {dataset_path} has {len(data)}")
    if ratio_model_path is not None:
        ratio = RatioModel.load(ratio_model_path)
        missing = set(data.labels) - set(ratio.labels)
        if missing:
            raise DataError(f"ratio model lacks environments {sorted(missing)}")
    else:
        ratio = fit_ratio_model(data, ratio_mode, classifier)
    report = cric(p, b, ratio, data, weight_normalized)
    x, y = data.pooled()
    err = float(np.mean((p.predict(x) - y) ** 2))
    extra = {"prediction_error": err}
    if theta is not None:
        extra["theta"] = theta
        extra["integrated_criterion"] = integrated_criterion(err, report.q_hat, theta)
    return report, extra


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
