import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cric.data import EnvDataset, MultiEnvDataset, SemConfig, generate_sem
from cric.errors import ConfigError, DataError, TrainingError
from cric.learners import (EnvMoments, Predictor, TrainConfig, descend, erm_objective,
                           irmv1_gradient, irmv1_objective, irmv1_penalty, risk, train,
                           train_erm, train_irmv1, train_vrex, vrex_objective, vrex_penalty,
                           zero_predictor)
from oracles import central_difference, random_instance, reference_objective, relative_error


def _data(envs):
    return MultiEnvDataset({str(i): EnvDataset(x, y) for i, (x, y) in enumerate(envs)})


def test_risk_examples():
    d = EnvDataset(np.array([[1.0], [2.0]]), np.array([1.0, -1.0]))
    assert risk(zero_predictor(1), d) == 1.0
    assert risk(Predictor([0.0], 3.0), EnvDataset(np.ones((3, 1)), np.full(3, 3.0))) == 0.0
    exact = EnvDataset(np.array([[1.0], [2.0]]), np.array([2.0, 4.0]))
    assert risk(Predictor([2.0]), exact) == 0.0


def test_irmv1_penalty_single_point_value():
    d = EnvDataset(np.array([[2.0], [2.0]]), np.array([1.0, 1.0]))
    p = Predictor([1.0])
    assert irmv1_gradient(p, d) == 4.0
    assert irmv1_penalty(p, d) == 16.0


def test_irmv1_penalty_zero_on_exact_fit():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert irmv1_penalty(Predictor([1.0, -2.0]), EnvDataset(x, x @ [1.0, -2.0])) == pytest.approx(0, abs=1e-28)


def test_irmv1_gradient_matches_central_difference_in_dummy():
    r = np.random.default_rng(1)
    x, y = r.normal(size=(30, 3)), r.normal(size=30)
    p = Predictor(r.normal(size=3), 0.4)
    d = EnvDataset(x, y)
    f = p.predict(x)
    h = 1e-4
    fd = (np.mean((f * (1 + h) - y) ** 2) - np.mean((f * (1 - h) - y) ** 2)) / (2 * h)
    assert abs(irmv1_gradient(p, d) - fd) <= 1e-6


def test_vrex_penalty_examples():
    assert vrex_penalty([1, 1, 1]) == 0.0
    assert vrex_penalty([0, 2]) == 1.0
    with pytest.raises(ConfigError):
        vrex_penalty([1.0])


@settings(max_examples=50, deadline=None)
@given(risks=st.lists(st.floats(0, 1e3), min_size=2, max_size=6), alpha=st.floats(0.01, 100))
def test_vrex_penalty_homogeneity(risks, alpha):
    assert vrex_penalty(np.array(risks) * alpha) == pytest.approx(alpha**2 * vrex_penalty(risks),
                                                                  rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("kind,obj", [("erm", erm_objective), ("irmv1", irmv1_objective),
                                      ("vrex", vrex_objective)])
def test_objectives_match_sample_reference(kind, obj):
    r = np.random.default_rng(2)
    for _ in range(20):
        envs, theta = random_instance(r)
        m = EnvMoments(_data(envs))
        lam, l2 = r.uniform(0, 100), r.uniform(0, 1)
        args = (l2,) if kind == "erm" else (lam, l2)
        f, g = obj(m, theta, *args)
        ref = reference_objective(kind, envs, theta, lam, l2)
        assert f == pytest.approx(ref, rel=1e-10)
        fd = central_difference(lambda t: reference_objective(kind, envs, t, lam, l2), theta)
        assert relative_error(g, fd) <= 1e-5


def test_erm_recovers_exact_slope():
    x = np.linspace(-1, 1, 40)[:, None]
    p = train_erm(_data([(x, 3 * x[:, 0])]), TrainConfig(l2=0.0))
    assert abs(p.coef[0] - 3.0) <= 1e-4 and p.kind == "erm_baseline" and p.phi is None


def test_erm_matches_least_squares():
    r = np.random.default_rng(3)
    envs, _ = random_instance(r, max_d=6, max_n=40, n_env=3)
    p = train_erm(_data(envs))
    x = np.vstack([e[0] for e in envs])
    y = np.concatenate([e[1] for e in envs])
    sol, *_ = np.linalg.lstsq(np.hstack([x, np.ones((len(y), 1))]), y, rcond=None)
    np.testing.assert_allclose(np.r_[p.coef, p.intercept], sol, atol=1e-6)


def test_erm_ignores_environment_labels():
    r = np.random.default_rng(4)
    envs, _ = random_instance(r, n_env=3)
    data = _data(envs)
    a = train_erm(data)
    b = train_erm(data.relabel({"0": "x", "1": "y", "2": "z"}))
    np.testing.assert_array_equal(a.w, b.w)


def test_zero_epochs_rejected():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"loss": "cross_entropy"})


def test_train_config_dict_roundtrip():
    cfg = TrainConfig(lam=3.0, epochs=7)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["lambda"] == 3.0


@pytest.mark.parametrize("trainer", [train_irmv1, train_vrex])
def test_zero_lambda_reproduces_erm(trainer):
    r = np.random.default_rng(5)
    envs, _ = random_instance(r, n_env=3)
    data = _data(envs)
    cfg = TrainConfig(lam=0.0)
    m = EnvMoments(data)
    theta_e = np.r_[train_erm(data, cfg).coef, train_erm(data, cfg).intercept]
    p = trainer(data, cfg)
    theta_p = np.r_[p.coef, p.intercept]
    assert erm_objective(m, theta_p, grad=False) == pytest.approx(
        erm_objective(m, theta_e, grad=False), abs=1e-10)


@pytest.mark.parametrize("trainer", [train_irmv1, train_vrex])
def test_zero_lambda_gd_trajectory_is_erm(trainer):
    r = np.random.default_rng(6)
    envs, _ = random_instance(r, n_env=2)
    data = _data(envs)
    cfg = TrainConfig(lam=0.0, optimizer="gd", epochs=200)
    a, b = [], []
    train_erm(data, cfg, callback=lambda i, f: a.append(f))
    trainer(data, cfg, callback=lambda i, f: b.append(f))
    assert a == b


@pytest.mark.parametrize("method", ["erm", "irmv1", "vrex"])
def test_objective_never_increases(method):
    data = generate_sem(SemConfig.for_setting("PEU", (0.2, 2.0, 5.0), 50, seed=2))
    trace = []
    fn = {"erm": train_erm, "irmv1": train_irmv1, "vrex": train_vrex}[method]
    fn(data, TrainConfig(epochs=300), callback=lambda i, f: trace.append(f))
    assert all(b <= a for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("method", ["erm", "irmv1", "vrex"])
def test_training_is_bitwise_deterministic(method):
    data = generate_sem(SemConfig.for_setting("POU", (0.2, 2.0, 5.0), 80, seed=9))
    a, b = train(method, data), train(method, data)
    assert a.to_dict() == b.to_dict()


def test_irmv1_shrinks_non_causal_block_on_fou():
    data = generate_sem(SemConfig.for_setting("FOU", (0.2, 2.0, 5.0), 267, seed=11))
    beta = train_irmv1(data).coef
    assert np.linalg.norm(beta[5:]) / np.linalg.norm(beta[:5]) < 0.2


def test_vrex_equalises_risks_on_feu():
    data = generate_sem(SemConfig.for_setting("FEU", (0.2, 2.0, 5.0), 267, seed=12))

    def spread(p):
        r = np.array([risk(p, env) for env in data.environments.values()])
        return (r.max() - r.min()) / r.mean()

    penalised = spread(train_vrex(data, TrainConfig(lam=1e4)))
    plain = spread(train_vrex(data, TrainConfig(lam=0.0)))
    assert penalised < 0.5 and penalised < plain


def test_vrex_gradient_of_penalty_vanishes_at_equal_risks():
    r = np.random.default_rng(13)
    x = r.normal(size=(20, 2))
    y = x @ [1.0, 1.0] + r.normal(size=20)
    data = _data([(x, y), (x.copy(), y.copy())])
    m = EnvMoments(data)
    theta = r.normal(size=3)
    _, g0 = vrex_objective(m, theta, 0.0)
    _, g1 = vrex_objective(m, theta, 1e4)
    np.testing.assert_allclose(g0, g1, atol=1e-9)


def test_penalised_trainers_need_two_environments():
    x = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(DataError):
        train_irmv1(_data([(x, x[:, 0])]))


def test_divergence_raises_training_error():
    def unbounded(theta, grad=True):
        with np.errstate(over="ignore"):
            f = -float(np.exp(theta[0] ** 2 + theta[0]))
        return (f, np.array([f * (2 * theta[0] + 1)])) if grad else f

    with pytest.raises(TrainingError) as info, np.errstate(over="ignore", invalid="ignore"):
        descend(unbounded, np.zeros(1), TrainConfig(optimizer="gd", learning_rate=1.0))
    assert np.isfinite(info.value.last_finite_loss)


def test_predictor_json_roundtrip(tmp_path):
    p = Predictor([1.0], 0.5, np.array([[1.0], [2.0]]), "irm_style")
    p.save(tmp_path / "p.json")
    q = Predictor.load(tmp_path / "p.json")
    x = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_array_equal(p.predict(x), q.predict(x))
    with pytest.raises(DataError):
        p.predict(np.zeros((2, 3)))
