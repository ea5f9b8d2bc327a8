"""
One-class SVM with an RBF kernel, trained by sequential minimal optimization.

The dual is scaled so that the coefficients sum to one::

    min  1/2 a^T K a    s.t.  0 <= a_i <= 1 / (nu * n),  sum a_i = 1

and the decision function is ``sum_i a_i K(sv_i, x) - rho``; negative means
outside the learned support. Working pairs are chosen with second-order
information, the way libsvm does.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np
from sklearn.metrics.pairwise import rbf_kernel

from detection.errors import DimensionError, TrainingError

logger = logging.getLogger(__name__)

TAU = 1e-12


def auto_gamma(X: np.ndarray) -> float:
    """1 / (d * mean feature variance)."""
    meanvar = float(np.var(X, axis=0).mean())
    if meanvar <= 0.0:
        raise TrainingError("every feature is constant; there is nothing to learn")
    return 1.0 / (X.shape[1] * meanvar)


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    rho: float
    gamma: float
    nu: float
    n_train: int
    iterations: int = 0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.nu * self.n_train)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return rbf_kernel(X, self.support_vectors, gamma=self.gamma) @ self.dual_coef - self.rho

    def predict(self, X: np.ndarray) -> np.ndarray:
        """True where a row is anomalous."""
        return self.decision_function(X) < 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'support_vectors': self.support_vectors.tolist(),
            'dual_coef': self.dual_coef.tolist(),
            'rho': self.rho,
            'gamma': self.gamma,
            'nu': self.nu,
            'n_train': self.n_train,
            'iterations': self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OcsvmModel":
        return cls(
            support_vectors=np.asarray(data['support_vectors'], dtype=float),
            dual_coef=np.asarray(data['dual_coef'], dtype=float),
            rho=float(data['rho']),
            gamma=float(data['gamma']),
            nu=float(data['nu']),
            n_train=int(data['n_train']),
            iterations=int(data.get('iterations', 0)),
        )


def _initial_alpha(n: int, C: float) -> np.ndarray:
    alpha = np.zeros(n)
    remaining = 1.0
    for i in range(n):
        if remaining <= 0.0:
            break
        alpha[i] = min(C, remaining)
        remaining -= alpha[i]
    return alpha


def _select_working_set(G: np.ndarray, alpha: np.ndarray, C: float, K: np.ndarray, tol: float):
    """Return (i, j) or None once the maximal violation is below ``tol``."""
    up = alpha < C
    low = alpha > 0.0
    neg_g = -G

    i = int(np.argmax(np.where(up, neg_g, -np.inf)))
    g_max = neg_g[i]
    g_min = np.min(np.where(low, neg_g, np.inf))
    if g_max - g_min < tol:
        return None

    # Second-order choice of j among the points that violate with i.
    b = g_max - neg_g
    candidates = low & (b > 0.0)
    a = K[i, i] + np.diag(K) - 2.0 * K[i]
    a = np.where(a > 0.0, a, TAU)
    gain = np.where(candidates, -(b * b) / a, np.inf)
    j = int(np.argmin(gain))
    return i, j


def _rho(G: np.ndarray, alpha: np.ndarray, C: float) -> float:
    free = (alpha > 0.0) & (alpha < C)
    if np.any(free):
        return float(G[free].mean())
    at_upper = alpha >= C
    lb = float(G[at_upper].max()) if np.any(at_upper) else -np.inf
    ub = float(G[~at_upper].min()) if np.any(~at_upper) else np.inf
    return (ub + lb) / 2.0


def fit_ocsvm(X: np.ndarray, nu: float = 0.05, gamma: Union[str, float] = "auto",
              tol: float = 1e-4, max_iter: int = 100000) -> OcsvmModel:
    """Solve the one-class dual on benign rows ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise TrainingError(f"need at least 2 training rows, got {n}")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    gamma = auto_gamma(X) if gamma in (None, "auto") else float(gamma)
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")

    C = 1.0 / (nu * n)
    K = rbf_kernel(X, gamma=gamma)
    alpha = _initial_alpha(n, C)
    G = K @ alpha

    iterations = 0
    for iterations in range(1, max_iter + 1):
        pair = _select_working_set(G, alpha, C, K, tol)
        if pair is None:
            break
        i, j = pair
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0.0:
            a = TAU
        # Move mass from j to i along the equality constraint.
        delta = (G[j] - G[i]) / a
        delta = min(delta, C - alpha[i], alpha[j])
        if delta <= 0.0:
            break
        alpha[i] += delta
        alpha[j] -= delta
        if alpha[j] < 1e-15:
            alpha[j] = 0.0
        if C - alpha[i] < 1e-15:
            alpha[i] = C
        G += delta * (K[:, i] - K[:, j])
    else:
        logger.warning(f"SMO stopped at max_iter={max_iter} before reaching tol={tol}")

    rho = _rho(G, alpha, C)
    support = alpha > 0.0
    logger.debug(
        f"One-class SVM: n={n}, d={X.shape[1]}, gamma={gamma:.4g}, {int(support.sum())} support vectors, "
        f"{iterations} iterations"
    )
    return OcsvmModel(
        support_vectors=X[support].copy(),
        dual_coef=alpha[support].copy(),
        rho=rho,
        gamma=gamma,
        nu=nu,
        n_train=n,
        iterations=iterations,
    )


def dual_objective(model: OcsvmModel) -> float:
    K = rbf_kernel(model.support_vectors, gamma=model.gamma)
    return 0.5 * float(model.dual_coef @ K @ model.dual_coef)


def training_outlier_fraction(model: OcsvmModel, X: np.ndarray, margin: float = 0.0) -> float:
    return float(np.mean(model.decision_function(X) < -margin))


def ocsvm_predict(model: OcsvmModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (anomaly, decision value); anomalous where the decision is negative."""
    score = model.decision_function(x)
    return score < 0.0, score
