"""
Isolation Forest baseline.

Scores follow the usual convention ``s(x) = 2 ** (-E[h(x)] / c(psi))`` in
[0, 1]; higher is more anomalous. A row is anomalous when its score is
above the (1 - nu) quantile of the training scores.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
from scipy.special import digamma
from sklearn.ensemble import IsolationForest

from detection.errors import DimensionError, TrainingError

logger = logging.getLogger(__name__)


def average_path_length(n) -> np.ndarray:
    """c(n) = 2 H(n-1) - 2 (n-1) / n, with c(1) = 0 and c(2) = 1."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    out[n == 2] = 1.0
    big = n > 2
    m = n[big]
    out[big] = 2.0 * (digamma(m) + np.euler_gamma) - 2.0 * (m - 1.0) / m
    return out


class IsolationForestModel:
    """sklearn ``IsolationForest`` plus a training-quantile threshold."""

    def __init__(self, trees: int = 100, subsample: int = 256, nu: float = 0.05, seed: Optional[int] = 0):
        if trees < 1:
            raise ValueError(f"trees must be >= 1, got {trees}")
        if not 0.0 < nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {nu}")
        self.trees = trees
        self.subsample = subsample
        self.nu = nu
        self.seed = seed
        self.forest: Optional[IsolationForest] = None
        self.threshold = np.inf
        self.n_features = 0

    @property
    def psi(self) -> int:
        return int(self.forest.max_samples_)

    def fit(self, X: np.ndarray) -> "IsolationForestModel":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {X.shape}")
        if X.shape[0] < 2:
            raise TrainingError(f"need at least 2 training rows, got {X.shape[0]}")
        self.n_features = X.shape[1]
        self.forest = IsolationForest(
            n_estimators=self.trees,
            max_samples=min(self.subsample, X.shape[0]),
            random_state=self.seed,
        )
        self.forest.fit(X)
        self.threshold = float(np.quantile(self.scores(X), 1.0 - self.nu))
        logger.debug(f"Isolation Forest: {self.trees} trees, psi={self.psi}, threshold={self.threshold:.4f}")
        return self

    def _check(self, X: np.ndarray) -> np.ndarray:
        if self.forest is None:
            raise TrainingError("Isolation Forest has not been fitted")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        """Mean path length E[h(x)] over the forest, leaf corrections included.

        Trees are grown on every feature, so rows are routed unpermuted.
        """
        X = self._check(X)
        total = np.zeros(X.shape[0])
        for tree in self.forest.estimators_:
            leaves = tree.apply(X)
            edges = np.asarray(tree.decision_path(X).sum(axis=1)).ravel() - 1
            total += edges + average_path_length(tree.tree_.n_node_samples[leaves])
        return total / len(self.forest.estimators_)

    def scores(self, X: np.ndarray) -> np.ndarray:
        return 2.0 ** (-self.path_lengths(X) / float(average_path_length(self.psi)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.scores(X) > self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {'trees': self.trees, 'subsample': self.subsample, 'nu': self.nu, 'seed': self.seed,
                'threshold': self.threshold}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], X: np.ndarray) -> "IsolationForestModel":
        """Rebuild by refitting on the stored training rows under the stored seed."""
        model = cls(trees=int(data['trees']), subsample=int(data['subsample']), nu=float(data['nu']),
                    seed=data.get('seed'))
        model.fit(X)
        return model


def fit_score_iforest(X_train: np.ndarray, x: np.ndarray, trees: int = 100, subsample: int = 256,
                      seed: Optional[int] = 0, nu: float = 0.05) -> np.ndarray:
    return IsolationForestModel(trees=trees, subsample=subsample, nu=nu, seed=seed).fit(X_train).scores(x)
