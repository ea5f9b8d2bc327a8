"""
Gaussian density baselines.

``independent`` multiplies univariate normal densities per feature;
``multivariate`` fits a full covariance. Work is done in log density, and
a row is anomalous when its log density falls below ``log_epsilon``.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from detection.errors import DimensionError, TrainingError
from detection.window import first_alarm

logger = logging.getLogger(__name__)

INDEPENDENT = "independent"
MULTIVARIATE = "multivariate"
MIN_RIDGE = 1e-6


@dataclass
class GaussianModel:
    mode: str
    mean: np.ndarray
    variance: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    ridge: float = 0.0
    log_epsilon: float = -np.inf

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def log_density(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"model expects {self.n_features} features, got {X.shape[1]}")
        if self.mode == INDEPENDENT:
            return stats.norm.logpdf(X, loc=self.mean, scale=np.sqrt(self.variance)).sum(axis=1)
        return np.atleast_1d(stats.multivariate_normal(mean=self.mean, cov=self.covariance).logpdf(X))

    def density(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """True where a row's density is below epsilon."""
        return self.log_density(X) < self.log_epsilon

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mode': self.mode,
            'mean': self.mean.tolist(),
            'variance': None if self.variance is None else self.variance.tolist(),
            'covariance': None if self.covariance is None else self.covariance.tolist(),
            'ridge': self.ridge,
            'log_epsilon': self.log_epsilon,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GaussianModel":
        def array(key):
            return None if data.get(key) is None else np.asarray(data[key], dtype=float)
        return cls(mode=data['mode'], mean=array('mean'), variance=array('variance'),
                   covariance=array('covariance'), ridge=float(data.get('ridge', 0.0)),
                   log_epsilon=float(data['log_epsilon']))


def _regularize(cov: np.ndarray, ridge: float, max_ridge: float) -> Tuple[np.ndarray, float]:
    eye = np.eye(cov.shape[0])
    lam = ridge
    while True:
        try:
            linalg.cholesky(cov + lam * eye, lower=True)
            return cov + lam * eye, lam
        except linalg.LinAlgError:
            lam = lam * 10.0 if lam > 0.0 else MIN_RIDGE
            if lam > max_ridge * (1.0 + 1e-9):
                raise TrainingError(f"covariance is not positive definite even with ridge {max_ridge:g}")
            logger.debug(f"Covariance not positive definite, raising ridge to {lam:g}")


def fit_gaussian(X: np.ndarray, mode: str = INDEPENDENT, var_floor: float = 1e-9, ridge: float = 1e-6,
                 max_ridge: float = 1e-2, nu: float = 0.05) -> GaussianModel:
    """Fit a density to benign rows; epsilon starts at the nu-quantile of training log densities."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {X.shape}")
    n, d = X.shape
    mean = X.mean(axis=0)
    if mode == INDEPENDENT:
        if n < 1:
            raise TrainingError("need at least one training row")
        variance = np.maximum(X.var(axis=0), var_floor)
        model = GaussianModel(mode=mode, mean=mean, variance=variance)
    elif mode == MULTIVARIATE:
        if n < d + 1:
            raise TrainingError(f"multivariate fit needs at least d+1={d + 1} rows, got {n}")
        cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
        cov, lam = _regularize(cov, ridge, max_ridge)
        model = GaussianModel(mode=mode, mean=mean, covariance=cov, ridge=lam)
    else:
        raise ValueError(f"unknown Gaussian mode '{mode}'")
    model.log_epsilon = float(np.quantile(model.log_density(X), nu))
    return model


def f1_score(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    return 2.0 * tp / denominator if denominator else 0.0


def choose_epsilon(train_log_density: np.ndarray, validation: Iterable[Tuple[np.ndarray, int]],
                   size: int, threshold: float,
                   quantiles: Sequence[float] = tuple(np.linspace(0.0, 0.25, 51))) -> Tuple[float, float]:
    """Pick the log-epsilon maximizing capture-level F1 under the window rule.

    ``validation`` holds (log densities of one capture, label) pairs.
    Candidates are training log-density quantiles; ties go to the smallest
    epsilon. Returns (log_epsilon, f1).
    """
    validation = list(validation)
    candidates = np.quantile(train_log_density, quantiles)
    best = (float(candidates[0]), -1.0)
    for candidate in np.sort(candidates):
        tp = fp = fn = 0
        for log_density, label in validation:
            fired = first_alarm(log_density < candidate, size, threshold) is not None
            tp += fired and label == 1
            fp += fired and label == 0
            fn += (not fired) and label == 1
        f1 = f1_score(tp, fp, fn)
        if f1 > best[1]:
            best = (float(candidate), f1)
    return best


def gaussian_score(model: GaussianModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (density, anomaly)."""
    log_density = model.log_density(x)
    return np.exp(log_density), log_density < model.log_epsilon
