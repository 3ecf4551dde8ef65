import csv
import json

import numpy as np
import pytest

from cric.errors import ConfigError, DataError, FitError
from cric.harness import (ExperimentConfig, ExperimentResult, ResultRow, emit_results, evaluate,
                          parse_method, replicate_data, run_experiment, run_replicate, summarize)
from cric.learners import Predictor, train_erm, zero_predictor
from cric.data import save_csv


FAST = {"train_cfg": {"irmv1": {"epochs": 300}, "vrex": {"epochs": 300}}}


@pytest.fixture(scope="module")
def fou_result():
    cfg = ExperimentConfig.from_dict({"setting": "FOU", "replicates": 10, **FAST})
    return run_experiment(cfg)


def test_row_count_matches_protocol(fou_result):
    assert len(fou_result.rows) == 40
    assert {(r.method, r.split) for r in fou_result.rows} == {
        (m, s) for m in ("irmv1", "vrex") for s in ("train", "test")}
    assert all(np.isfinite([r.q_hat, r.log10_q_hat, r.numerator, r.denominator]).all()
               for r in fou_result.rows)


def test_q_table_has_six_pairs_per_row(fou_result):
    assert len(fou_result.q_table) == 40 * 6


def test_erm_against_itself_is_one():
    cfg = ExperimentConfig(methods=("erm",), replicates=2)
    rows = run_experiment(cfg).rows
    assert [r.q_hat for r in rows] == [1.0] * 4


def test_replicates_are_independent_of_order():
    cfg = ExperimentConfig.from_dict({"setting": "POU", "replicates": 3, **FAST})
    fwd = run_experiment(cfg, [0, 1, 2])
    rev = run_experiment(cfg, [2, 1, 0])
    key = lambda r: (r.replicate, r.method, r.split)
    assert sorted(map(repr, fwd.rows), key=str) == sorted(map(repr, rev.rows), key=str)
    assert {key(r): r.q_hat for r in fwd.rows} == {key(r): r.q_hat for r in rev.rows}


def test_partial_weights_redrawn_across_replicates():
    cfg = ExperimentConfig(setting="PEU", replicates=2)
    a, _ = replicate_data(cfg, 0)
    b, _ = replicate_data(cfg, 1)
    assert not np.array_equal(a["2.0"].covariates, b["2.0"].covariates)


def test_sample_allocation():
    cfg = ExperimentConfig(n_train=800, n_test=500)
    tr, te = replicate_data(cfg, 0)
    assert [tr[e].n for e in tr] == [267, 267, 266]
    assert sum(te[e].n for e in te) == 500


def test_held_out_environment_mode():
    cfg = ExperimentConfig(test_env_scales=(3.0, 4.0), replicates=1, **FAST)
    _, te = replicate_data(cfg, 0)
    assert te.labels == ["3.0", "4.0"]
    assert len(run_experiment(cfg).rows) == 4


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(replicates=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=())
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        parse_method("svm")
    assert parse_method("REx-V") == "vrex"


def test_config_roundtrip():
    cfg = ExperimentConfig.from_dict({"setting": "FEU", "replicates": 2, **FAST})
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.train_config("irmv1") == cfg.train_config("irmv1")


def test_summary_population_std():
    rows = [ResultRow(0, "FOU", "irmv1", "train", 1.0, 0.0, 1.0, 1.0, {})]
    res = ExperimentResult(rows, [
        {"setting": "FOU", "method": "irmv1", "split": "train", "q_cross": v} for v in (-1.0, 1.0)])
    q = summarize(res)["q_cross"][0]["q_cross"]
    assert q["mean"] == 0.0 and q["std"] == 1.0


def test_emit_results(tmp_path, fou_result):
    emit_results(fou_result, tmp_path)
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert len(lines) == 41
    rows = list(csv.DictReader(lines))
    assert float(rows[0]["q_hat"]) == fou_result.rows[0].q_hat
    assert rows[0]["risks"].count("=") == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {"conventions", "cric", "q_cross", "configs"} <= set(summary)
    assert len(summary["cric"]) == 4 and len(summary["q_cross"]) == 4
    assert len(json.loads((tmp_path / "q_table.json").read_text())) == 240


def test_run_replicate_annotates_errors():
    cfg = ExperimentConfig.from_dict({"replicates": 1, **FAST,
                                      "classifier": {"max_iter": 1, "tol": 1e-15}})
    with pytest.raises(FitError, match=r"\[replicate 0, train ratio fit\]"):
        run_replicate(cfg, 0)


@pytest.fixture
def csv_case(tmp_path):
    cfg = ExperimentConfig(replicates=1)
    train, _ = replicate_data(cfg, 0)
    save_csv(train, tmp_path / "d.csv")
    base = train_erm(train)
    base.save(tmp_path / "b.json")
    zero_predictor(10).save(tmp_path / "z.json")
    return tmp_path, train


def test_evaluate_baseline_and_zero(csv_case):
    d, _ = csv_case
    rep, extra = evaluate(d / "d.csv", d / "b.json", d / "b.json")
    assert rep.q_hat == 1.0
    rep, extra = evaluate(d / "d.csv", d / "z.json", d / "b.json", theta=2.0)
    assert rep.q_hat == 0.0
    assert extra["integrated_criterion"] == extra["prediction_error"]


def test_evaluate_dimension_mismatch(csv_case):
    d, _ = csv_case
    Predictor(np.zeros(3)).save(d / "small.json")
    with pytest.raises(DataError, match="features"):
        evaluate(d / "d.csv", d / "small.json", d / "b.json")
