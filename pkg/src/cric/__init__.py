"""Covariate-shift representation invariance criterion (CRIC).

Scores how invariant a predictor is across environments by comparing
likelihood-ratio reweighted cross-environment prediction means against the
same quantity for a pooled ERM baseline.
"""

from .criterion import CricReport, PairStatistic, cric, integrated_criterion, q_hat_cross, q_hat_self
from .data import (EnvDataset, MultiEnvDataset, SemConfig, Setting, generate_sem, load_csv,
                   save_csv, split_per_env)
from .errors import (ConfigError, CricError, DataError, DegenerateBaselineError, FitError,
                     NumericError, TrainingError)
from .learners import (Predictor, TrainConfig, irmv1_penalty, risk, train_erm, train_irmv1,
                       train_vrex, vrex_penalty)
from .ratio import (ClassifierConfig, PairClassifier, RatioModel, exact_gaussian_ratio,
                    fit_pair_classifier, fit_ratio_model, ratio_at, ratio_diagnostics)

__version__ = "0.1.0"
