"""Empirical CRIC: importance-weighted cross-environment mean gaps.

For a predictor ``f`` and environments ``e != e'``::

    q_cross(e, e') = mean_{x in e'} f(x) * rho_{e,e'}(x)
    q_self(e)      = mean_{x in e}  f(x)
    Q = sum (q_cross - q_self)^2 [f]  /  sum (q_cross - q_self)^2 [baseline]

summed over ordered pairs.  An invariant predictor keeps the gaps small
relative to the pooled-ERM baseline; Q < 1 means more invariant than ERM.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MultiEnvDataset
from .errors import ConfigError, DataError, DegenerateBaselineError
from .learners import ERM_BASELINE, Predictor
from .ratio import RatioModel

DENOMINATOR_RTOL = 1e-12


@dataclass(frozen=True)
class PairStatistic:
    e: str
    e_prime: str
    q_cross: float
    q_self: float

    @property
    def squared_gap(self) -> float:
        return (self.q_cross - self.q_self) ** 2

    def to_dict(self) -> dict:
        return {"e": self.e, "e_prime": self.e_prime, "q_cross": self.q_cross,
                "q_self": self.q_self, "squared_gap": self.squared_gap}


def _finite_or_none(v):
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class CricReport:
    pair_stats_phi: tuple[PairStatistic, ...]
    pair_stats_baseline: tuple[PairStatistic, ...]
    numerator: float
    denominator: float
    q_hat: float
    log10_q_hat: float
    weight_normalized: bool = False

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "log10_q_hat": _finite_or_none(self.log10_q_hat),
            "numerator": self.numerator,
            "denominator": self.denominator,
            "weight_normalized": self.weight_normalized,
            "pair_stats_phi": [s.to_dict() for s in self.pair_stats_phi],
            "pair_stats_baseline": [s.to_dict() for s in self.pair_stats_baseline],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def weighted_mean(values, weights, normalize: bool = False) -> float:
    """``mean(values * weights)``; with ``normalize`` the weights are first rescaled to mean 1."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if normalize:
        weights = weights / weights.mean()
    return float(np.mean(values * weights))


def q_hat_cross(p: Predictor, ratio: RatioModel, e: str, e_prime: str,
                data: MultiEnvDataset, weight_normalized: bool = False) -> float:
    """Mean prediction on the ``e_prime`` sample reweighted toward ``e``."""
    if e == e_prime:
        raise ConfigError("q_hat_cross needs two distinct environments; use q_hat_self")
    x = data[e_prime].covariates
    return weighted_mean(p.predict(x), ratio.weights(e, e_prime, x), weight_normalized)


def q_hat_self(p: Predictor, e: str, data: MultiEnvDataset) -> float:
    return float(np.mean(p.predict(data[e].covariates)))


def _pair_stats(preds: dict, weights: dict, pairs) -> tuple[PairStatistic, ...]:
    self_means = {e: float(np.mean(v)) for e, v in preds.items()}
    return tuple(
        PairStatistic(e, ep, float(np.mean(preds[ep] * weights[(e, ep)])), self_means[e])
        for e, ep in pairs
    )


def cric(p: Predictor, baseline: Predictor, ratio: RatioModel, data: MultiEnvDataset,
         weight_normalized: bool = False) -> CricReport:
    """Compute Q-hat for ``p`` against ``baseline`` over all ordered pairs of ``data``.

    One set of ratio weights, evaluated once per ordered pair, serves both the
    numerator and the denominator.

    Raises:
        DataError: fewer than two environments.
        ConfigError: ``baseline`` is not an ERM baseline.
        DegenerateBaselineError: the baseline's gaps sum to (numerically) zero.
    """
    if len(data) < 2:
        raise DataError(f"CRIC needs at least 2 environments, got {len(data)}")
    if baseline.kind != ERM_BASELINE:
        raise ConfigError(f"baseline must be an {ERM_BASELINE!r} predictor, got {baseline.kind!r}")
    pairs = list(itertools.permutations(data.labels, 2))
    weights = {}
    for e, ep in pairs:
        w = np.asarray(ratio.weights(e, ep, data[ep].covariates), dtype=float)
        if weight_normalized:
            w = w / w.mean()
        weights[(e, ep)] = w

    preds_p = {e: p.predict(env.covariates) for e, env in data.items()}
    preds_b = {e: baseline.predict(env.covariates) for e, env in data.items()}
    stats_p = _pair_stats(preds_p, weights, pairs)
    stats_b = _pair_stats(preds_b, weights, pairs)
    numerator = math.fsum(s.squared_gap for s in stats_p)
    denominator = math.fsum(s.squared_gap for s in stats_b)

    scale2 = float(np.mean(np.concatenate(list(preds_b.values())) ** 2))
    if not denominator > DENOMINATOR_RTOL * scale2:
        raise DegenerateBaselineError(
            f"baseline cross-environment gaps vanish (denominator={denominator:.3g}); "
            "environments are indistinguishable under the baseline and CRIC is undefined")
    q = numerator / denominator
    return CricReport(stats_p, stats_b, numerator, denominator, q,
                      math.log10(q) if q > 0 else -math.inf, weight_normalized)


def integrated_criterion(prediction_error: float, q_hat: float, theta: float) -> float:
    """Prediction error plus ``theta`` times Q-hat; smaller is better."""
    return prediction_error + theta * q_hat
