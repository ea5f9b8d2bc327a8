"""
Local Outlier Factor baseline in novelty mode.

New rows are scored against the training set only. A row is anomalous when
its LOF exceeds the (1 - nu) quantile of the training LOF values.

Local reachability density is 1 / (mean reachability distance + 1e-10), the
additive floor scikit-learn applies; exact duplicates therefore score 1
instead of dividing by zero.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
from sklearn.neighbors import LocalOutlierFactor

from detection.errors import DimensionError, TrainingError

logger = logging.getLogger(__name__)


class LofModel:
    def __init__(self, k: int = 20, nu: float = 0.05):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not 0.0 < nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {nu}")
        self.k = k
        self.nu = nu
        self.lof: Optional[LocalOutlierFactor] = None
        self.threshold = np.inf
        self.n_features = 0

    def fit(self, X: np.ndarray) -> "LofModel":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {X.shape}")
        if X.shape[0] <= self.k:
            raise TrainingError(f"LOF with k={self.k} needs more than {self.k} training rows, got {X.shape[0]}")
        self.n_features = X.shape[1]
        self.lof = LocalOutlierFactor(n_neighbors=self.k, novelty=True)
        self.lof.fit(X)
        training = -self.lof.negative_outlier_factor_
        self.threshold = float(np.quantile(training, 1.0 - self.nu))
        logger.debug(f"LOF: k={self.k}, threshold={self.threshold:.4f} (offset {self.threshold - 1.0:+.4f})")
        return self

    @property
    def offset(self) -> float:
        return self.threshold - 1.0

    def scores(self, X: np.ndarray) -> np.ndarray:
        """LOF value of each row; about 1 for inliers."""
        if self.lof is None:
            raise TrainingError("LOF has not been fitted")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return -self.lof.score_samples(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.scores(X) > self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {'k': self.k, 'nu': self.nu, 'threshold': self.threshold}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], X: np.ndarray) -> "LofModel":
        return cls(k=int(data['k']), nu=float(data['nu'])).fit(X)


def score_lof(X_train: np.ndarray, x: np.ndarray, k: int = 20) -> np.ndarray:
    return LofModel(k=k).fit(X_train).scores(x)
