"""
Detector pipelines: feature scaling, one of five models, a per-sample
threshold, JSON persistence and the streaming monitor.

Every pipeline reports anomaly scores where higher means more anomalous and
a sample is anomalous when its score is above the pipeline threshold.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from detection.errors import DimensionError, TrainingError
from detection.gaussian import INDEPENDENT, MULTIVARIATE, GaussianModel, choose_epsilon, fit_gaussian
from detection.iforest import IsolationForestModel
from detection.lof import LofModel
from detection.ocsvm import OcsvmModel, fit_ocsvm
from detection.window import SlidingWindow, WindowVerdict
from utils import Config

logger = logging.getLogger(__name__)

KINDS = ("ocsvm", "iforest", "lof", "iga", "mga")
GAUSSIAN_MODES = {"iga": INDEPENDENT, "mga": MULTIVARIATE}
FORMAT_VERSION = 1


def fingerprint(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=float).tobytes()).hexdigest()


def _scaler_to_dict(scaler: StandardScaler) -> Dict[str, Any]:
    return {'mean': scaler.mean_.tolist(), 'scale': scaler.scale_.tolist(), 'var': scaler.var_.tolist(),
            'n_samples_seen': int(scaler.n_samples_seen_)}


def _scaler_from_dict(data: Dict[str, Any]) -> StandardScaler:
    scaler = StandardScaler()
    scaler.mean_ = np.asarray(data['mean'], dtype=float)
    scaler.scale_ = np.asarray(data['scale'], dtype=float)
    scaler.var_ = np.asarray(data['var'], dtype=float)
    scaler.n_features_in_ = scaler.mean_.shape[0]
    scaler.n_samples_seen_ = int(data['n_samples_seen'])
    return scaler


class DetectorPipeline:
    """StandardScaler followed by one detector."""

    def __init__(self, kind: str = "ocsvm", params: Optional[Dict[str, Any]] = None):
        if kind not in KINDS:
            raise ValueError(f"unknown detector kind '{kind}', expected one of {', '.join(KINDS)}")
        self.kind = kind
        self.params: Dict[str, Any] = dict(params or {})
        self.scaler: Optional[StandardScaler] = None
        self.model: Union[OcsvmModel, IsolationForestModel, LofModel, GaussianModel, None] = None
        self.columns: List[str] = []
        self.fingerprint = ""
        self.threshold = 0.0
        self._training: Optional[np.ndarray] = None

    @classmethod
    def from_config(cls, config: Config, kind: str = "ocsvm") -> "DetectorPipeline":
        nu = config.get("detection.nu", 0.05)
        if kind == "ocsvm":
            params = {'nu': nu, 'gamma': config.get("detection.gamma", "auto"),
                      'tol': config.get("detection.tol", 1e-4), 'max_iter': config.get("detection.max_iter", 100000)}
        elif kind == "iforest":
            params = {'nu': nu, 'trees': config.get("detection.iforest.trees", 100),
                      'subsample': config.get("detection.iforest.subsample", 256),
                      'seed': config.get("seeds.iforest", 0)}
        elif kind == "lof":
            params = {'nu': nu, 'k': config.get("detection.lof.k", 20)}
        else:
            params = {'nu': nu, 'var_floor': config.get("detection.gaussian.var_floor", 1e-9),
                      'ridge': config.get("detection.gaussian.ridge", 1e-6),
                      'max_ridge': config.get("detection.gaussian.max_ridge", 1e-2)}
        return cls(kind, params)

    @property
    def fitted(self) -> bool:
        return self.model is not None

    @property
    def n_features(self) -> int:
        return len(self.scaler.mean_) if self.scaler is not None else 0

    def fit(self, X: np.ndarray, columns: Optional[Sequence[str]] = None,
            validation: Optional[Iterable[Tuple[np.ndarray, int]]] = None,
            window: Tuple[int, float] = (15, 0.6)) -> "DetectorPipeline":
        """Fit on benign rows.

        ``validation`` (feature matrix, label) pairs are only used by the
        Gaussian kinds, to tune epsilon under the ``window`` rule.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise TrainingError(f"expected a non-empty 2-D training matrix, got shape {X.shape}")
        if columns is not None and len(columns) != X.shape[1]:
            raise DimensionError(f"{len(columns)} column names for {X.shape[1]} features")
        self.columns = list(columns) if columns is not None else [f"f_{i}" for i in range(X.shape[1])]
        self.fingerprint = fingerprint(X)
        self.scaler = StandardScaler().fit(X)
        Z = self.scaler.transform(X)
        self._fit_model(Z)

        if self.kind in GAUSSIAN_MODES and validation is not None:
            scored = [(self.model.log_density(self.scaler.transform(np.asarray(V, dtype=float))), int(label))
                      for V, label in validation]
            if scored:
                log_epsilon, f1 = choose_epsilon(self.model.log_density(Z), scored, *window)
                self.model.log_epsilon = log_epsilon
                self.threshold = -log_epsilon
                logger.info(f"{self.kind}: epsilon tuned on {len(scored)} validation captures (F1 {f1:.3f})")

        logger.info(f"Trained {self.kind} on {X.shape[0]} rows x {X.shape[1]} features")
        return self

    def _fit_model(self, Z: np.ndarray) -> None:
        p = self.params
        nu = float(p.get('nu', 0.05))
        if self.kind == "ocsvm":
            self.model = fit_ocsvm(Z, nu=nu, gamma=p.get('gamma', "auto"), tol=float(p.get('tol', 1e-4)),
                                   max_iter=int(p.get('max_iter', 100000)))
            self.params['gamma'] = self.model.gamma
            self.threshold = 0.0
        elif self.kind == "iforest":
            self.model = IsolationForestModel(trees=int(p.get('trees', 100)), subsample=int(p.get('subsample', 256)),
                                              nu=nu, seed=p.get('seed', 0)).fit(Z)
            self.threshold = self.model.threshold
            self._training = Z
        elif self.kind == "lof":
            self.model = LofModel(k=int(p.get('k', 20)), nu=nu).fit(Z)
            self.threshold = self.model.threshold
            self._training = Z
        else:
            self.model = fit_gaussian(Z, mode=GAUSSIAN_MODES[self.kind], var_floor=float(p.get('var_floor', 1e-9)),
                                      ridge=float(p.get('ridge', 1e-6)), max_ridge=float(p.get('max_ridge', 1e-2)),
                                      nu=nu)
            self.threshold = -self.model.log_epsilon

    def transform(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise TrainingError("pipeline has not been trained")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"pipeline expects {self.n_features} features, got {X.shape[1]}")
        return self.scaler.transform(X)

    def scores(self, X: np.ndarray) -> np.ndarray:
        Z = self.transform(X)
        if self.kind == "ocsvm":
            return -self.model.decision_function(Z)
        if self.kind in GAUSSIAN_MODES:
            return -self.model.log_density(Z)
        return self.model.scores(Z)

    def anomalies(self, X: np.ndarray) -> np.ndarray:
        return self.scores(X) > self.threshold

    def check_columns(self, columns: Sequence[str]) -> None:
        if list(columns) != self.columns:
            raise DimensionError(
                f"capture columns do not match the trained model ({len(columns)} vs {len(self.columns)})"
            )

    def to_dict(self) -> Dict[str, Any]:
        if not self.fitted:
            raise TrainingError("pipeline has not been trained")
        document = {
            'format': FORMAT_VERSION,
            'kind': self.kind,
            'params': self.params,
            'columns': self.columns,
            'fingerprint': self.fingerprint,
            'threshold': self.threshold,
            'scaler': _scaler_to_dict(self.scaler),
            'model': self.model.to_dict(),
        }
        if self._training is not None:
            document['training'] = self._training.tolist()
        return document

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "DetectorPipeline":
        pipeline = cls(document['kind'], document.get('params'))
        pipeline.columns = list(document['columns'])
        pipeline.fingerprint = document['fingerprint']
        pipeline.scaler = _scaler_from_dict(document['scaler'])
        data = document['model']
        if pipeline.kind == "ocsvm":
            pipeline.model = OcsvmModel.from_dict(data)
        elif pipeline.kind in GAUSSIAN_MODES:
            pipeline.model = GaussianModel.from_dict(data)
        else:
            Z = np.asarray(document['training'], dtype=float)
            pipeline._training = Z
            model_cls = IsolationForestModel if pipeline.kind == "iforest" else LofModel
            pipeline.model = model_cls.from_dict(data, Z)
        pipeline.threshold = float(document['threshold'])
        if len(pipeline.columns) != pipeline.n_features:
            raise DimensionError("model document columns do not match its scaler")
        return pipeline

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()), encoding='utf-8')
        logger.info(f"Saved {self.kind} model to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DetectorPipeline":
        document = json.loads(Path(path).read_text(encoding='utf-8'))
        return cls.from_dict(document)


@dataclass(frozen=True)
class MonitorRecord:
    t: float
    score: float
    anomaly: bool
    verdict: WindowVerdict


class Monitor:
    """Streams rows through a pipeline and a private sliding window."""

    def __init__(self, pipeline: DetectorPipeline, size: int = 15, threshold: float = 0.6):
        self.pipeline = pipeline
        self.window = SlidingWindow(size, threshold)
        self.records: List[MonitorRecord] = []
        self.first_attack: Optional[float] = None
        self.logger = logging.getLogger(__name__)

    def push(self, t: float, row: Sequence[float]) -> MonitorRecord:
        score = float(self.pipeline.scores(np.asarray(row, dtype=float))[0])
        return self._record(t, score)

    def _record(self, t: float, score: float) -> MonitorRecord:
        anomaly = score > self.pipeline.threshold
        verdict = self.window.push(anomaly)
        record = MonitorRecord(t=float(t), score=score, anomaly=anomaly, verdict=verdict)
        self.records.append(record)
        if verdict is WindowVerdict.ATTACK and self.first_attack is None:
            self.first_attack = record.t
            self.logger.warning(f"Attack detected at t={record.t:.0f}s")
        return record

    def run(self, times: Sequence[float], X: np.ndarray) -> List[MonitorRecord]:
        """Score a whole capture at once, then replay it through the window."""
        scores = self.pipeline.scores(X) if len(times) else np.zeros(0)
        return [self._record(t, float(s)) for t, s in zip(times, scores)]

    def run_capture(self, df: pd.DataFrame) -> List[MonitorRecord]:
        columns = [c for c in df.columns if c[:2] in ("s_", "d_", "a_", "c_")]
        self.pipeline.check_columns(columns)
        return self.run(df["t"].tolist(), df[columns].to_numpy(dtype=float))

    @property
    def detected(self) -> bool:
        return self.first_attack is not None

    def reset(self) -> None:
        self.window.reset()
        self.records = []
        self.first_attack = None

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't': [r.t for r in self.records],
            'score': [r.score for r in self.records],
            'anomaly': [int(r.anomaly) for r in self.records],
            'verdict': [r.verdict.value for r in self.records],
        })

    def save_log(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.log_frame().to_csv(path, index=False, lineterminator='\n')
        return path
