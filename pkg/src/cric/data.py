"""Multi-environment datasets: containers, the linear SEM generator, CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .seeding import make_rng


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EnvDataset:
    """Covariates ``(n_e, d)`` and scalar outcomes ``(n_e,)`` of one environment."""

    covariates: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        x = _frozen(self.covariates)
        y = _frozen(self.outcomes)
        if x.ndim != 2:
            raise DataError(f"covariates must be 2-D, got shape {x.shape}")
        if y.ndim != 1:
            raise DataError(f"outcomes must be 1-D, got shape {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise DataError(
                f"covariates have {x.shape[0]} rows but outcomes have {y.shape[0]}")
        if x.shape[0] < 2:
            raise DataError(f"an environment needs at least 2 samples, got {x.shape[0]}")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DataError("covariates and outcomes must be finite")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcomes", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class MultiEnvDataset:
    """Ordered mapping from environment label to :class:`EnvDataset`."""

    environments: Mapping[str, EnvDataset]
    feature_dim: int = field(default=0)

    def __post_init__(self):
        envs = dict(self.environments)
        if not envs:
            raise DataError("a dataset needs at least one environment")
        for label in envs:
            if not isinstance(label, str) or not label:
                raise DataError(f"environment labels must be non-empty strings, got {label!r}")
        dims = {e.dim for e in envs.values()}
        if len(dims) != 1:
            raise DataError(f"environments disagree on feature dimension: {sorted(dims)}")
        d = dims.pop()
        if self.feature_dim and self.feature_dim != d:
            raise DataError(f"feature_dim={self.feature_dim} but data has {d} columns")
        if d < 1:
            raise DataError("feature_dim must be positive")
        object.__setattr__(self, "environments", envs)
        object.__setattr__(self, "feature_dim", d)

    @property
    def labels(self) -> list[str]:
        return list(self.environments)

    def __getitem__(self, label: str) -> EnvDataset:
        try:
            return self.environments[label]
        except KeyError:
            raise KeyError(f"unknown environment {label!r}; have {self.labels}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.environments)

    def __len__(self) -> int:
        return len(self.environments)

    def items(self):
        return self.environments.items()

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([e.covariates for e in self.environments.values()])
        y = np.concatenate([e.outcomes for e in self.environments.values()])
        return x, y

    def relabel(self, mapping: Mapping[str, str]) -> "MultiEnvDataset":
        return MultiEnvDataset({mapping.get(k, k): v for k, v in self.environments.items()})


# --------------------------------------------------------------------------- SEM


class Setting(str, Enum):
    """Linear SEM regimes: P/F = hidden confounding on/off, O/E = noise placement."""

    POU = "POU"
    PEU = "PEU"
    FOU = "FOU"
    FEU = "FEU"

    @property
    def partially_observed(self) -> bool:
        return self.value[0] == "P"

    @property
    def heteroskedastic(self) -> bool:
        return self.value[1] == "E"


def parse_setting(value) -> Setting:
    if isinstance(value, Setting):
        return value
    try:
        return Setting(str(value).upper())
    except ValueError:
        raise ConfigError(
            f"unknown setting {value!r}; expected one of {[s.value for s in Setting]}") from None


def env_label(scale: float) -> str:
    return repr(float(scale))


@dataclass(frozen=True)
class SemConfig:
    """All parameters of the linear structural equation model.

    Shapes: ``w_h_to_1`` is ``(dim_x1, dim_h)`` with ``dim_h == dim_x1``,
    ``w_h_to_y`` is ``(dim_h,)``, ``w_y_to_2`` is ``(dim_x2,)`` and
    ``w_1_to_y`` is ``(dim_x1,)`` (all ones). Use :meth:`for_setting` to build
    one with the weights drawn as the setting prescribes.
    """

    env_scales: tuple[float, ...]
    setting: Setting
    w_h_to_1: np.ndarray
    w_h_to_y: np.ndarray
    w_y_to_2: np.ndarray
    w_1_to_y: np.ndarray
    n_per_env: tuple[int, ...]
    seed: int = 0
    dim_x1: int = 5
    dim_x2: int = 5

    def __post_init__(self):
        setting = parse_setting(self.setting)
        object.__setattr__(self, "setting", setting)
        scales = tuple(float(s) for s in self.env_scales)
        if not scales:
            raise ConfigError("env_scales must be non-empty")
        if any(not (math.isfinite(s) and s > 0) for s in scales):
            raise ConfigError(f"env_scales must be positive and finite, got {scales}")
        if len({env_label(s) for s in scales}) != len(scales):
            raise ConfigError(f"env_scales must be distinct, got {scales}")
        object.__setattr__(self, "env_scales", scales)

        n = self.n_per_env
        n = (n,) * len(scales) if isinstance(n, (int, np.integer)) else tuple(n)
        if len(n) != len(scales) or any(int(k) != k or k < 2 for k in n):
            raise ConfigError(f"n_per_env must give an integer >= 2 per environment, got {n}")
        object.__setattr__(self, "n_per_env", tuple(int(k) for k in n))

        if self.dim_x1 < 1 or self.dim_x2 < 1:
            raise ConfigError("dim_x1 and dim_x2 must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        expected = {
            "w_h_to_1": (self.dim_x1, self.dim_x1),
            "w_h_to_y": (self.dim_x1,),
            "w_y_to_2": (self.dim_x2,),
            "w_1_to_y": (self.dim_x1,),
        }
        for name, shape in expected.items():
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if not setting.partially_observed:
            for name in ("w_h_to_1", "w_h_to_y", "w_y_to_2"):
                if np.any(getattr(self, name)):
                    raise ConfigError(f"{name} must be zero in fully-observed setting {setting.value}")

    @classmethod
    def for_setting(cls, setting, env_scales: Sequence[float], n_per_env, seed: int = 0,
                    dim_x1: int = 5, dim_x2: int = 5,
                    weight_seed: int | None = None) -> "SemConfig":
        """Build a config; P settings draw the confounding weights i.i.d. N(0, 1).

        The weights come from their own stream keyed by ``weight_seed``
        (defaults to ``seed``), so they are frozen within a replicate and
        fresh across replicates that use different seeds.
        """
        setting = parse_setting(setting)
        if setting.partially_observed:
            ws = seed if weight_seed is None else weight_seed
            w_h_to_1 = make_rng(ws, "sem-weights", "h_to_1").standard_normal((dim_x1, dim_x1))
            w_h_to_y = make_rng(ws, "sem-weights", "h_to_y").standard_normal(dim_x1)
            w_y_to_2 = make_rng(ws, "sem-weights", "y_to_2").standard_normal(dim_x2)
        else:
            w_h_to_1 = np.zeros((dim_x1, dim_x1))
            w_h_to_y = np.zeros(dim_x1)
            w_y_to_2 = np.zeros(dim_x2)
        return cls(env_scales=tuple(env_scales), setting=setting, w_h_to_1=w_h_to_1,
                   w_h_to_y=w_h_to_y, w_y_to_2=w_y_to_2, w_1_to_y=np.ones(dim_x1),
                   n_per_env=n_per_env, seed=seed, dim_x1=dim_x1, dim_x2=dim_x2)

    def noise_scales(self, e: float) -> tuple[float, float]:
        """Standard deviations ``(sigma_y, sigma_2)`` for environment scale ``e``."""
        if self.setting.heteroskedastic:
            return 1.0, e
        return e, 1.0


def generate_sem(config: SemConfig) -> MultiEnvDataset:
    """Sample one dataset from the SEM; covariates are ``[X1, X2]``.

    Environment ``i`` draws each variable's noise from the stream
    ``(config.seed, "sem", i, <variable>)``.
    """
    envs = {}
    for i, (e, n) in enumerate(zip(config.env_scales, config.n_per_env)):
        sigma_y, sigma_2 = config.noise_scales(e)
        h = e * make_rng(config.seed, "sem", i, "H").standard_normal((n, config.dim_x1))
        x1 = h @ config.w_h_to_1.T + e * make_rng(config.seed, "sem", i, "X1").standard_normal((n, config.dim_x1))
        y = (x1 @ config.w_1_to_y + h @ config.w_h_to_y
             + sigma_y * make_rng(config.seed, "sem", i, "Y").standard_normal(n))
        x2 = np.outer(y, config.w_y_to_2) + sigma_2 * make_rng(config.seed, "sem", i, "X2").standard_normal((n, config.dim_x2))
        envs[env_label(e)] = EnvDataset(np.hstack([x1, x2]), y)
    return MultiEnvDataset(envs)


# --------------------------------------------------------------------------- CSV


def load_csv(path, env_column: str = "env", target_column: str = "y") -> MultiEnvDataset:
    """Read a dataset; every column other than env/target is a feature, in header order."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (env_column, target_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (header: {header})")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        env_idx = header.index(env_column)
        y_idx = header.index(target_column)
        feat_idx = [i for i in range(len(header)) if i not in (env_idx, y_idx)]
        if not feat_idx:
            raise DataError(f"{path}: no feature columns")

        rows: dict[str, tuple[list, list]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            label = row[env_idx].strip()
            if not label:
                raise DataError(f"{path}: row {lineno} has an empty {env_column!r} value")
            values = []
            for i in [y_idx, *feat_idx]:
                try:
                    v = float(row[i])
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[i]!r}: non-numeric value {row[i]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {header[i]!r}: non-finite value {row[i]!r}")
                values.append(v)
            xs, ys = rows.setdefault(label, ([], []))
            ys.append(values[0])
            xs.append(values[1:])

    if not rows:
        raise DataError(f"{path}: no data rows")
    small = {k: len(v[1]) for k, v in rows.items() if len(v[1]) < 2}
    if small:
        raise DataError(f"{path}: environments with fewer than 2 rows: {small}")
    return MultiEnvDataset({k: EnvDataset(np.array(xs), np.array(ys)) for k, (xs, ys) in rows.items()})


def save_csv(data: MultiEnvDataset, path, env_column: str = "env",
             target_column: str = "y") -> None:
    """Write ``env, y, x0..x{d-1}``; floats use shortest round-trip repr."""
    header = [env_column, target_column] + [f"x{j}" for j in range(data.feature_dim)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for label, env in data.items():
            for xi, yi in zip(env.covariates, env.outcomes):
                w.writerow([label, repr(float(yi)), *(repr(float(v)) for v in xi)])


# --------------------------------------------------------------------------- splits


def split_per_env(data: MultiEnvDataset, train_fraction: float,
                  seed: int = 0) -> tuple[MultiEnvDataset, MultiEnvDataset]:
    """Shuffle each environment and cut it into ``floor(n_e * fraction)`` / rest."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    train, test = {}, {}
    for i, (label, env) in enumerate(data.items()):
        n_train = math.floor(env.n * train_fraction)
        if n_train < 2 or env.n - n_train < 2:
            raise DataError(
                f"environment {label!r}: splitting {env.n} rows at {train_fraction} gives "
                f"{n_train}/{env.n - n_train}; both sides need at least 2")
        perm = make_rng(seed, "split", i).permutation(env.n)
        a, b = perm[:n_train], perm[n_train:]
        train[label] = EnvDataset(env.covariates[a], env.outcomes[a])
        test[label] = EnvDataset(env.covariates[b], env.outcomes[b])
    return MultiEnvDataset(train), MultiEnvDataset(test)


def allocate(total: int, k: int) -> list[int]:
    """Split ``total`` evenly over ``k`` parts, remainder to the first parts."""
    base, rem = divmod(total, k)
    return [base + (1 if i < rem else 0) for i in range(k)]
