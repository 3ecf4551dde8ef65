"""Likelihood-ratio estimation between environments.

Two routes are offered.  ``classifier`` fits a ridge-penalised logistic model
that separates the two covariate samples and converts its class probability
into a ratio with the prior correction ``n2 * p / (n1 * (1 - p))``.
``exact_gaussian`` evaluates the ratio of two multivariate normal densities
in closed form, either with known parameters or with sample moments.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import EnvDataset, MultiEnvDataset
from .errors import ConfigError, DataError, FitError, NumericError

CLASSIFIER = "classifier"
EXACT_GAUSSIAN = "exact_gaussian"
MODES = (CLASSIFIER, EXACT_GAUSSIAN)


def parse_mode(mode: str) -> str:
    m = str(mode).replace("-", "_").lower()
    if m not in MODES:
        raise ConfigError(f"unknown ratio mode {mode!r}; expected one of {MODES}")
    return m


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True)
class ClassifierConfig:
    ridge: float = 1e-4          # per-sample strength; total penalty is ridge * n
    clip_epsilon: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ConfigError(f"clip_epsilon must lie in (0, 0.5), got {self.clip_epsilon}")
        if self.ridge < 0 or self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("ridge must be >= 0, tol > 0 and max_iter >= 1")


@dataclass(frozen=True)
class PairClassifier:
    """Logistic model of Pr(E = e1 | X = x) for the pooled sample of ``pair``.

    ``weights[0]`` is the intercept, ``weights[1:]`` the coefficients on raw
    covariates.
    """

    pair: tuple[str, str]
    weights: np.ndarray
    n1: int
    n2: int
    clip_epsilon: float = 1e-3

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "pair", tuple(self.pair))
        if not np.isfinite(w).all():
            raise NumericError(f"non-finite classifier weights for pair {self.pair}")
        if self.n1 < 2 or self.n2 < 2:
            raise DataError(f"pair {self.pair}: need n1, n2 >= 2, got {self.n1}, {self.n2}")
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ConfigError(f"clip_epsilon must lie in (0, 0.5), got {self.clip_epsilon}")

    def prob(self, x) -> np.ndarray:
        """Unclipped p-hat(x); ``x`` is ``(d,)`` or ``(n, d)``."""
        x = np.asarray(x, dtype=float)
        return _sigmoid(self.weights[0] + x @ self.weights[1:])

    def ratio(self, x, reverse: bool = False) -> np.ndarray:
        """dP^{e1}/dP^{e2} at ``x`` (or the reciprocal direction if ``reverse``)."""
        eps = self.clip_epsilon
        p = np.clip(self.prob(x), eps, 1.0 - eps)
        n1, n2 = self.n1, self.n2
        if reverse:
            p, n1, n2 = 1.0 - p, n2, n1
        return (n2 * p) / (n1 * (1.0 - p))


def _penalised_nll(theta, z_design, t, ridge):
    logits = z_design @ theta
    nll = np.mean(np.logaddexp(0.0, logits) - t * logits)
    return nll + 0.5 * ridge * theta[1:] @ theta[1:]


def fit_pair_classifier(d1: EnvDataset, d2: EnvDataset, pair=("e1", "e2"),
                        config: ClassifierConfig | None = None) -> PairClassifier:
    """Fit p-hat on the labelled union (1 for ``d1`` rows, 0 for ``d2`` rows).

    Features are standardised internally for conditioning and the fitted
    coefficients are mapped back to raw-covariate scale.  Minimisation uses
    damped Newton steps with an Armijo backtracking line search until the
    sup-norm of the gradient drops to ``config.tol``.
    """
    cfg = config or ClassifierConfig()
    if d1.dim != d2.dim:
        raise DataError(f"pair {pair}: feature dims differ ({d1.dim} vs {d2.dim})")
    x = np.vstack([d1.covariates, d2.covariates])
    t = np.concatenate([np.ones(d1.n), np.zeros(d2.n)])
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    z = np.hstack([np.ones((x.shape[0], 1)), (x - mu) / sd])
    n, k = z.shape
    pen = np.full(k, cfg.ridge)
    pen[0] = 0.0

    theta = np.zeros(k)
    theta[0] = np.log(d1.n / d2.n)
    f = _penalised_nll(theta, z, t, cfg.ridge)
    gnorm = np.inf
    for _ in range(cfg.max_iter):
        p = _sigmoid(z @ theta)
        grad = z.T @ (p - t) / n + pen * theta
        gnorm = np.max(np.abs(grad))
        if gnorm <= cfg.tol:
            break
        hess = (z * (p * (1 - p))[:, None]).T @ z / n + np.diag(pen)
        try:
            step = -np.linalg.solve(hess + 1e-12 * np.eye(k), grad)
        except np.linalg.LinAlgError:
            step = -grad
        slope = grad @ step
        if slope >= 0:
            step, slope = -grad, -(grad @ grad)
        a = 1.0
        while True:
            cand = theta + a * step
            fc = _penalised_nll(cand, z, t, cfg.ridge)
            if fc <= f + 1e-4 * a * slope:
                break
            a *= 0.5
            if a < 1e-20:
                raise FitError(f"pair {pair}: line search failed (|grad|_inf={gnorm:.3g})", gnorm)
        theta, f = cand, fc
    else:
        p = _sigmoid(z @ theta)
        gnorm = np.max(np.abs(z.T @ (p - t) / n + pen * theta))
        if gnorm > cfg.tol:
            raise FitError(
                f"pair {pair}: no convergence in {cfg.max_iter} iterations "
                f"(|grad|_inf={gnorm:.3g})", gnorm)

    coef = theta[1:] / sd
    intercept = theta[0] - coef @ mu
    return PairClassifier(tuple(pair), np.concatenate([[intercept], coef]),
                          d1.n, d2.n, cfg.clip_epsilon)


# --------------------------------------------------------------------------- Gaussian route


def _as_gaussian(params):
    mean, cov = params
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    if cov.shape != (mean.size, mean.size):
        raise ConfigError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
    return mean, cov


def gaussian_logpdf(params, x) -> np.ndarray:
    mean, cov = _as_gaussian(params)
    x = np.asarray(x, dtype=float)
    # 0-d: one 1-D point; 1-d: a batch of scalars when the law is 1-D, else one point
    single = x.ndim == 0 or (x.ndim == 1 and mean.size > 1)
    xx = x.reshape(-1, mean.size)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError("covariance matrix is not positive definite") from None
    diag = np.diag(chol)
    if np.any(diag <= 1e-300) or not np.all(np.isfinite(diag)):
        raise NumericError("covariance matrix is singular")
    sol = np.linalg.solve(chol, (xx - mean).T)
    maha = np.sum(sol * sol, axis=0)
    out = -0.5 * maha - np.sum(np.log(diag)) - 0.5 * mean.size * np.log(2 * np.pi)
    return out[0] if single else out


def exact_gaussian_ratio(params1, params2, x):
    """phi_1(x) / phi_2(x), formed as exp of a log-density difference.

    ``params`` are ``(mean, covariance)``; scalars are accepted for 1-D.

    >>> float(exact_gaussian_ratio((0.0, 1.0), (0.0, 4.0), 0.0))
    2.0
    """
    return np.exp(gaussian_logpdf(params1, x) - gaussian_logpdf(params2, x))


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class RatioModel:
    """Ratio estimates for every ordered pair of a dataset's environments.

    In classifier mode one :class:`PairClassifier` is stored per unordered
    pair, keyed in dataset order; the opposite direction is a view of it.
    """

    labels: tuple[str, ...]
    mode: str = CLASSIFIER
    pair_classifiers: Mapping[tuple[str, str], PairClassifier] = field(default_factory=dict)
    gaussian_params: Mapping[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", parse_mode(self.mode))
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.mode == CLASSIFIER:
            for a, b in itertools.combinations(self.labels, 2):
                if (a, b) not in self.pair_classifiers:
                    raise ConfigError(f"ratio model is missing pair ({a!r}, {b!r})")
        else:
            params = {k: _as_gaussian(v) for k, v in self.gaussian_params.items()}
            missing = set(self.labels) - set(params)
            if missing:
                raise ConfigError(f"gaussian parameters missing for {sorted(missing)}")
            object.__setattr__(self, "gaussian_params", params)

    def _check(self, *labels):
        for lab in labels:
            if lab not in self.labels:
                raise KeyError(f"ratio model has no environment {lab!r}; have {list(self.labels)}")

    def weights(self, e: str, e_prime: str, x) -> np.ndarray:
        """Estimated dP^e/dP^{e'} at each row of ``x``."""
        self._check(e, e_prime)
        x = np.asarray(x, dtype=float)
        if e == e_prime:
            return np.ones(x.shape[0]) if x.ndim == 2 else np.float64(1.0)
        if self.mode == EXACT_GAUSSIAN:
            return exact_gaussian_ratio(self.gaussian_params[e], self.gaussian_params[e_prime], x)
        if (e, e_prime) in self.pair_classifiers:
            return self.pair_classifiers[(e, e_prime)].ratio(x)
        return self.pair_classifiers[(e_prime, e)].ratio(x, reverse=True)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "labels": list(self.labels)}
        if self.mode == CLASSIFIER:
            out["pairs"] = [
                {"e1": c.pair[0], "e2": c.pair[1], "weights": c.weights.tolist(),
                 "n1": c.n1, "n2": c.n2, "clip_epsilon": c.clip_epsilon}
                for c in self.pair_classifiers.values()
            ]
        else:
            out["gaussian_params"] = {
                k: {"mean": m.tolist(), "cov": c.tolist()} for k, (m, c) in self.gaussian_params.items()
            }
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RatioModel":
        try:
            mode = parse_mode(doc["mode"])
            labels = tuple(doc["labels"])
            if mode == CLASSIFIER:
                pcs = {}
                for p in doc["pairs"]:
                    c = PairClassifier((p["e1"], p["e2"]), p["weights"], int(p["n1"]),
                                       int(p["n2"]), float(p["clip_epsilon"]))
                    pcs[c.pair] = c
                return cls(labels, mode, pair_classifiers=pcs)
            gp = {k: (np.array(v["mean"]), np.array(v["cov"])) for k, v in doc["gaussian_params"].items()}
            return cls(labels, mode, gaussian_params=gp)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed ratio model document: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RatioModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def ratio_at(model: RatioModel, e: str, e_prime: str, x) -> float:
    """Scalar ratio dP^e/dP^{e'} at a single covariate point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if e == e_prime:
        model._check(e)
        return 1.0
    return float(model.weights(e, e_prime, x)[0])


def sample_gaussian_params(data: MultiEnvDataset) -> dict:
    """Per-environment sample mean and unbiased sample covariance."""
    out = {}
    for label, env in data.items():
        cov = np.atleast_2d(np.cov(env.covariates, rowvar=False, ddof=1))
        out[label] = (env.covariates.mean(axis=0), cov)
    return out


def fit_ratio_model(data: MultiEnvDataset, mode: str = CLASSIFIER,
                    config: ClassifierConfig | None = None,
                    gaussian_params: Mapping | None = None) -> RatioModel:
    """Fit ratios for all ordered environment pairs of ``data`` on raw covariates.

    In ``exact_gaussian`` mode the supplied ``gaussian_params`` are used when
    given, otherwise the sample moments of each environment.
    """
    mode = parse_mode(mode)
    labels = tuple(data.labels)
    if mode == EXACT_GAUSSIAN:
        params = dict(gaussian_params) if gaussian_params is not None else sample_gaussian_params(data)
        return RatioModel(labels, mode, gaussian_params=params)
    pcs = {}
    for a, b in itertools.combinations(labels, 2):
        pcs[(a, b)] = fit_pair_classifier(data[a], data[b], (a, b), config)
    return RatioModel(labels, mode, pair_classifiers=pcs)


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def ratio_diagnostics(model: RatioModel, data: MultiEnvDataset) -> dict:
    """Weight summaries for every ordered pair, evaluated on the e' sample.

    The population mean of dP^e/dP^{e'} under P^{e'} is 1, so
    ``mean_weight`` far from 1 or ``ess`` far below ``n`` flag poor ratios.
    """
    pairs = []
    for e, ep in itertools.permutations(data.labels, 2):
        w = np.asarray(model.weights(e, ep, data[ep].covariates))
        pairs.append({
            "e": e,
            "e_prime": ep,
            "n": int(w.size),
            "mean_weight": float(w.mean()),
            "min_weight": float(w.min()),
            "max_weight": float(w.max()),
            "ess": effective_sample_size(w),
        })
    return {"mode": model.mode, "pairs": pairs}
