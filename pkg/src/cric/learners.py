"""Linear ERM, IRMv1 and V-REx trainers with squared-error loss.

All three fit ``f(x) = beta . x + b``.  IRMv1 treats ``f`` as the
representation followed by a fixed scalar dummy classifier ``w = 1.0``;
V-REx and ERM train the same linear map directly (a linear head on a linear
representation is again linear).  Objectives are evaluated from
per-environment second moments of ``z = [x, 1]``, so an iteration costs
``O(|E| d^2)`` regardless of sample size.

Objectives (``theta = [beta, b]``)::

    erm    pooled_mse(theta) + l2 |beta|^2
    irmv1  pooled_mse(theta) + lambda * mean_e g_e(theta)^2 + l2 |beta|^2
    vrex   pooled_mse(theta) + lambda * Var_e R_e(theta)   + l2 |beta|^2

where ``g_e = dR_e(w * f)/dw`` at ``w = 1``.  With equal environment sizes
``pooled_mse`` equals the average of the per-environment risks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import EnvDataset, MultiEnvDataset
from .errors import ConfigError, DataError, TrainingError

ERM_BASELINE = "erm_baseline"
IRM_STYLE = "irm_style"


@dataclass(frozen=True)
class Predictor:
    """``predict(x) = w . (x @ phi) + intercept``; ``phi=None`` is the identity map."""

    w: np.ndarray
    intercept: float = 0.0
    phi: np.ndarray | None = None
    kind: str = ERM_BASELINE

    def __post_init__(self):
        w = np.atleast_1d(np.array(self.w, dtype=float))
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "intercept", float(self.intercept))
        if self.phi is not None:
            phi = np.array(self.phi, dtype=float)
            if phi.ndim == 1:
                phi = phi[:, None]
            if phi.ndim != 2 or phi.shape[1] != w.size:
                raise ConfigError(f"phi shape {phi.shape} does not match w of length {w.size}")
            phi.setflags(write=False)
            object.__setattr__(self, "phi", phi)
        if self.kind not in (ERM_BASELINE, IRM_STYLE):
            raise ConfigError(f"unknown predictor kind {self.kind!r}")
        if not (np.isfinite(w).all() and math.isfinite(self.intercept)
                and (self.phi is None or np.isfinite(self.phi).all())):
            raise ConfigError("predictor parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.w.size if self.phi is None else self.phi.shape[0]

    @property
    def coef(self) -> np.ndarray:
        """Effective linear coefficients on the raw covariates."""
        return self.w if self.phi is None else self.phi @ self.w

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise DataError(f"predictor expects {self.input_dim} features, got {x.shape[-1]}")
        h = x if self.phi is None else x @ self.phi
        return h @ self.w + self.intercept

    def scaled(self, alpha: float, shift: float = 0.0) -> "Predictor":
        """The predictor ``alpha * f + shift``."""
        return Predictor(self.w * alpha, self.intercept * alpha + shift, self.phi, self.kind)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "phi": None if self.phi is None else self.phi.tolist(),
            "w": self.w.tolist(),
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Predictor":
        try:
            return cls(np.array(doc["w"], dtype=float), float(doc.get("intercept", 0.0)),
                       None if doc.get("phi") is None else np.array(doc["phi"], dtype=float),
                       doc.get("kind", ERM_BASELINE))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed predictor document: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Predictor":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read predictor {path}: {exc}") from exc
        return cls.from_dict(doc)


def zero_predictor(d: int) -> Predictor:
    return Predictor(np.zeros(d), 0.0, np.eye(d), IRM_STYLE)


# --------------------------------------------------------------------------- risks and penalties


def risk(p: Predictor, d: EnvDataset) -> float:
    """Mean squared error of ``p`` on one environment."""
    r = p.predict(d.covariates) - d.outcomes
    return float(np.mean(r * r))


def irmv1_gradient(p: Predictor, d: EnvDataset) -> float:
    """Derivative in a scalar multiplier ``w`` of MSE(w * f) at ``w = 1``."""
    f = p.predict(d.covariates)
    return float(2.0 * np.mean(f * (f - d.outcomes)))


def irmv1_penalty(p: Predictor, d: EnvDataset) -> float:
    g = irmv1_gradient(p, d)
    return g * g


def vrex_penalty(risks: Sequence[float]) -> float:
    """Population variance of the per-environment risks."""
    r = np.asarray(risks, dtype=float)
    if r.size < 2:
        raise ConfigError(f"variance penalty needs at least 2 risks, got {r.size}")
    return float(np.mean((r - r.mean()) ** 2))


# --------------------------------------------------------------------------- objectives


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e4
    learning_rate: float = 1e-3
    epochs: int = 50_000
    l2: float = 0.0
    seed: int = 0       # initialisation is all-zero; kept for provenance
    tol: float = 1e-8   # stop when |grad|_inf falls below this
    optimizer: str = "bfgs"   # "bfgs" or "gd" (plain steepest descent)

    def __post_init__(self):
        for name in ("lam", "learning_rate", "l2", "tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
        if self.lam < 0 or self.l2 < 0:
            raise ConfigError("lam and l2 must be non-negative")
        if self.learning_rate <= 0 or self.tol <= 0:
            raise ConfigError("learning_rate and tol must be positive")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if self.optimizer not in ("bfgs", "gd"):
            raise ConfigError(f"optimizer must be 'bfgs' or 'gd', got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        loss = doc.pop("loss", "squared_error")
        if loss not in ("squared_error", "mse"):
            raise ConfigError(f"only squared-error loss is supported, got {loss!r}")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        doc["loss"] = "squared_error"
        return doc


class EnvMoments:
    """Stacked second moments of ``z = [x, 1]`` and ``y`` per environment."""

    def __init__(self, data: MultiEnvDataset):
        a, c, s, n = [], [], [], []
        for env in data.environments.values():
            z = np.hstack([env.covariates, np.ones((env.n, 1))])
            a.append(z.T @ z / env.n)
            c.append(z.T @ env.outcomes / env.n)
            s.append(env.outcomes @ env.outcomes / env.n)
            n.append(env.n)
        self.a = np.stack(a)
        self.c = np.stack(c)
        self.s = np.array(s)
        self.frac = np.array(n, dtype=float) / float(sum(n))
        self.dim = self.a.shape[1]

    def risks(self, theta):
        at = self.a @ theta                        # (E, k)
        return at @ theta - 2.0 * self.c @ theta + self.s, at

    def dummy_grads(self, theta, at):
        return 2.0 * (at @ theta - self.c @ theta)


def _l2(theta, l2):
    beta = theta[:-1]
    return l2 * (beta @ beta)


def _l2_grad(theta, l2):
    g = 2.0 * l2 * theta
    g[-1] = 0.0
    return g


def erm_objective(m: EnvMoments, theta, l2=0.0, grad=True):
    risks, at = m.risks(theta)
    f = m.frac @ risks + _l2(theta, l2)
    if not grad:
        return f
    return f, 2.0 * (m.frac @ (at - m.c)) + _l2_grad(theta, l2)


def irmv1_objective(m: EnvMoments, theta, lam, l2=0.0, grad=True):
    risks, at = m.risks(theta)
    g = m.dummy_grads(theta, at)
    ne = g.size
    f = m.frac @ risks + lam * (g @ g) / ne + _l2(theta, l2)
    if not grad:
        return f
    dg = 2.0 * (2.0 * at - m.c)                    # (E, k): gradients of g_e
    df = (2.0 * (m.frac @ (at - m.c)) + lam * (2.0 / ne) * (g @ dg) + _l2_grad(theta, l2))
    return f, df


def vrex_objective(m: EnvMoments, theta, lam, l2=0.0, grad=True):
    risks, at = m.risks(theta)
    dev = risks - risks.mean()
    ne = risks.size
    f = m.frac @ risks + lam * (dev @ dev) / ne + _l2(theta, l2)
    if not grad:
        return f
    dr = 2.0 * (at - m.c)                          # (E, k): gradients of R_e
    df = 2.0 * (m.frac @ (at - m.c)) + lam * (2.0 / ne) * (dev @ dr) + _l2_grad(theta, l2)
    return f, df


def descend(objective: Callable, theta0, cfg: TrainConfig,
            callback: Callable[[int, float], None] | None = None):
    """Full-batch descent with Armijo backtracking.

    With ``cfg.optimizer == "gd"`` every trial step is the negative gradient
    times ``cfg.learning_rate``.  With ``"bfgs"`` the first direction is the
    same and later directions use the BFGS inverse-Hessian estimate, which is
    reset whenever it fails to give a descent direction or the curvature
    condition fails.  Every accepted step satisfies the Armijo
    condition, so the objective never increases.  Stops when
    ``|grad|_inf <= cfg.tol``, when ten consecutive steps fail to lower the
    objective by more than rounding noise, or after ``cfg.epochs`` iterations.
    """
    theta = np.array(theta0, dtype=float)
    k = theta.size
    f, g = objective(theta, grad=True)
    if not math.isfinite(f):
        raise TrainingError("initial objective is not finite", None)
    if callback:
        callback(0, f)
    eye = np.eye(k)
    h = cfg.learning_rate * eye
    stalled = 0
    for it in range(1, cfg.epochs + 1):
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient at iteration {it}", f)
        if np.max(np.abs(g)) <= cfg.tol:
            break
        d = -h @ g
        slope = g @ d
        if not slope < 0:
            h = cfg.learning_rate * eye
            d = -h @ g
            slope = g @ d
        a = 1.0
        while True:
            cand = theta + a * d
            fc = objective(cand, grad=False)
            if fc <= f + 1e-4 * a * slope:
                break
            a *= 0.5
            if a < 1e-30:
                return theta, f
        f_new, g_new = objective(cand, grad=True)
        if not math.isfinite(f_new):
            raise TrainingError(f"objective became non-finite at iteration {it}", f)
        if cfg.optimizer == "bfgs":
            s, yv = cand - theta, g_new - g
            sy = s @ yv
            if sy > 1e-12 * np.sqrt((s @ s) * (yv @ yv)):
                rho = 1.0 / sy
                v = eye - rho * np.outer(s, yv)
                h = v @ h @ v.T + rho * np.outer(s, s)
            else:
                h = cfg.learning_rate * eye
        stalled = stalled + 1 if f - f_new <= 1e-13 * (1.0 + abs(f)) else 0
        theta, f, g = cand, f_new, g_new
        if callback:
            callback(it, f)
        if stalled >= 10:
            break
    return theta, f


def _require(data: MultiEnvDataset, min_envs: int):
    if len(data) < min_envs:
        raise DataError(f"need at least {min_envs} environment(s), got {len(data)}")


def train_erm(data: MultiEnvDataset, cfg: TrainConfig | None = None, callback=None) -> Predictor:
    """Pooled least squares (with optional ridge); environment labels are ignored."""
    cfg = cfg or TrainConfig()
    _require(data, 1)
    m = EnvMoments(data)
    theta, _ = descend(lambda t, grad=True: erm_objective(m, t, cfg.l2, grad),
                       np.zeros(m.dim), cfg, callback)
    return Predictor(theta[:-1], theta[-1], None, ERM_BASELINE)


def train_irmv1(data: MultiEnvDataset, cfg: TrainConfig | None = None, callback=None) -> Predictor:
    cfg = cfg or TrainConfig()
    _require(data, 2)
    m = EnvMoments(data)
    theta, _ = descend(lambda t, grad=True: irmv1_objective(m, t, cfg.lam, cfg.l2, grad),
                       np.zeros(m.dim), cfg, callback)
    return Predictor(np.ones(1), theta[-1], theta[:-1, None], IRM_STYLE)


def train_vrex(data: MultiEnvDataset, cfg: TrainConfig | None = None, callback=None) -> Predictor:
    cfg = cfg or TrainConfig()
    _require(data, 2)
    m = EnvMoments(data)
    theta, _ = descend(lambda t, grad=True: vrex_objective(m, t, cfg.lam, cfg.l2, grad),
                       np.zeros(m.dim), cfg, callback)
    return Predictor(np.ones(1), theta[-1], theta[:-1, None], IRM_STYLE)


TRAINERS = {"erm": train_erm, "irmv1": train_irmv1, "vrex": train_vrex}


def train(method: str, data: MultiEnvDataset, cfg: TrainConfig | None = None) -> Predictor:
    try:
        fn = TRAINERS[method.lower().replace("-", "").replace("_", "")]
    except KeyError:
        raise ConfigError(f"unknown method {method!r}; expected one of {sorted(TRAINERS)}") from None
    return fn(data, cfg)
