"""
PlantWatch evaluation - per-capture verdicts, confusion counts, detection
times and the window/threshold sweep.

A capture is flagged when any full window during it fires. Detection time
is the first firing at or after the attack onset, minus the onset.
"""

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from collector.main import CaptureRecord, feature_matrix, load_capture
from detection.pipeline import DetectorPipeline, MonitorRecord
from detection.window import WindowVerdict, run_window
from harness.errors import ReportError
from utils import Config

logger = logging.getLogger(__name__)


@dataclass
class ScoredCapture:
    """Per-sample scores of one capture, computed once and judged under any window."""
    record: CaptureRecord
    times: np.ndarray
    scores: np.ndarray
    anomalies: np.ndarray


@dataclass
class CaptureOutcome:
    name: str
    scenario: str
    category: Optional[str]
    stealthy: bool
    label: int
    detected: bool
    first_alarm: Optional[float] = None
    onset: Optional[float] = None
    detection_time: Optional[float] = None


def train_pipeline(config: Config, kind: str, paths: Sequence[Union[str, Path]],
                   validation: Optional[Sequence[Union[str, Path]]] = None,
                   window: Optional[tuple] = None) -> DetectorPipeline:
    """Fit a detector on benign capture files; labeled validation files tune Gaussian epsilon."""
    frames = [load_capture(p) for p in paths]
    if not frames:
        raise ReportError("no training captures given")
    columns = [c for c in frames[0].columns if c[:2] in ("s_", "d_", "a_", "c_")]
    X = np.vstack([feature_matrix(df) for df in frames])
    labelled = None
    if validation:
        labelled = []
        for path in validation:
            df = load_capture(path)
            if 'label' not in df.columns:
                raise ReportError(f"validation capture {path} has no label column")
            labelled.append((feature_matrix(df), int(df['label'].iloc[0])))
    pipeline = DetectorPipeline.from_config(config, kind)
    return pipeline.fit(X, columns=columns, validation=labelled, window=window or (15, 0.6))


def score_captures(pipeline: DetectorPipeline, records: Iterable[CaptureRecord],
                   root: Union[str, Path] = ".") -> List[ScoredCapture]:
    records = list(records)
    platforms = {r.platform for r in records}
    if len(platforms) > 1:
        raise ReportError(f"captures from several platforms in one report: {sorted(platforms)}")
    scored = []
    for record in records:
        df = load_capture(Path(root) / record.path)
        columns = [c for c in df.columns if c[:2] in ("s_", "d_", "a_", "c_")]
        pipeline.check_columns(columns)
        scores = pipeline.scores(df[columns].to_numpy(dtype=float)) if len(df) else np.zeros(0)
        scored.append(ScoredCapture(record=record, times=df["t"].to_numpy(dtype=float), scores=scores,
                                    anomalies=scores > pipeline.threshold))
    return scored


def detection_time(log: Union[pd.DataFrame, Sequence[MonitorRecord]], onset: float) -> Optional[float]:
    """Seconds from onset to the first attack verdict at or after it; None if never."""
    if isinstance(log, pd.DataFrame):
        times, verdicts = log['t'].tolist(), log['verdict'].tolist()
    else:
        times, verdicts = [r.t for r in log], [r.verdict for r in log]
    for t, verdict in zip(times, verdicts):
        if verdict in (WindowVerdict.ATTACK, WindowVerdict.ATTACK.value) and t >= onset:
            return float(t - onset)
    return None


def judge(capture: ScoredCapture, size: int, threshold: float) -> CaptureOutcome:
    record = capture.record
    verdicts = run_window(capture.anomalies.tolist(), size, threshold)
    alarms = [t for t, v in zip(capture.times, verdicts) if v is WindowVerdict.ATTACK]
    outcome = CaptureOutcome(
        name=record.name,
        scenario=record.scenario,
        category=record.category,
        stealthy=record.stealthy,
        label=record.label,
        detected=bool(alarms),
        first_alarm=float(alarms[0]) if alarms else None,
        onset=record.onset,
    )
    if record.label == 1 and alarms:
        onset = record.onset or 0.0
        after = [t for t in alarms if t >= onset]
        outcome.detection_time = float(after[0] - onset) if after else None
    return outcome


def _rate(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass
class EvalReport:
    platform: str
    detector: str
    window_size: int
    window_threshold: float
    outcomes: List[CaptureOutcome] = field(default_factory=list)
    reference: Dict[str, Any] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return sum(o.label == 1 and o.detected for o in self.outcomes)

    @property
    def fn(self) -> int:
        return sum(o.label == 1 and not o.detected for o in self.outcomes)

    @property
    def fp(self) -> int:
        return sum(o.label == 0 and o.detected for o in self.outcomes)

    @property
    def tn(self) -> int:
        return sum(o.label == 0 and not o.detected for o in self.outcomes)

    @property
    def attacks(self) -> int:
        return sum(o.label == 1 for o in self.outcomes)

    @property
    def benign(self) -> int:
        return sum(o.label == 0 for o in self.outcomes)

    @property
    def tpr(self) -> Optional[float]:
        return _rate(self.tp, self.tp + self.fn)

    @property
    def fpr(self) -> Optional[float]:
        return _rate(self.fp, self.fp + self.tn)

    @property
    def detection_times(self) -> List[float]:
        return [o.detection_time for o in self.outcomes if o.label == 1 and o.detection_time is not None]

    @property
    def median_detection_time(self) -> Optional[float]:
        times = self.detection_times
        return float(np.median(times)) if times else None

    def categories(self) -> Dict[str, Dict[str, Any]]:
        """Attack count, detections and rate per category, plus a stealthy row."""
        counts: Dict[str, List[int]] = defaultdict(lambda: [0, 0])
        for o in self.outcomes:
            if o.label != 1:
                continue
            keys = [o.category or "Uncategorized"] + (["Stealthy"] if o.stealthy else [])
            for key in keys:
                counts[key][0] += 1
                counts[key][1] += int(o.detected)
        return {key: {'attacks': n, 'detected': d, 'rate': _rate(d, n)} for key, (n, d) in counts.items()}

    def check(self) -> None:
        if self.tp + self.fn != self.attacks or self.tn + self.fp != self.benign:
            raise ReportError("confusion counts do not add up to the capture counts")
        if self.tpr is not None and self.tpr != self.tp / (self.tp + self.fn):
            raise ReportError("TPR does not match TP/(TP+FN)")
        if self.fpr is not None and self.fpr != self.fp / (self.fp + self.tn):
            raise ReportError("FPR does not match FP/(FP+TN)")

    def to_dict(self) -> Dict[str, Any]:
        self.check()
        return {
            'platform': self.platform,
            'detector': self.detector,
            'window': {'size': self.window_size, 'threshold': self.window_threshold},
            'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn,
            'tpr': self.tpr, 'fpr': self.fpr,
            'median_detection_s': self.median_detection_time,
            'categories': self.categories(),
            'reference': self.reference,
            'outcomes': [asdict(o) for o in self.outcomes],
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path


def evaluate_scored(scored: Sequence[ScoredCapture], size: int, threshold: float, detector: str = "ocsvm",
                    reference: Optional[Dict[str, Any]] = None) -> EvalReport:
    platforms = {c.record.platform for c in scored}
    if len(platforms) > 1:
        raise ReportError(f"captures from several platforms in one report: {sorted(platforms)}")
    report = EvalReport(
        platform=platforms.pop() if platforms else "",
        detector=detector,
        window_size=size,
        window_threshold=threshold,
        outcomes=[judge(c, size, threshold) for c in scored],
        reference=dict(reference or {}),
    )
    report.check()
    return report


def evaluate_captures(pipeline: DetectorPipeline, records: Iterable[CaptureRecord], root: Union[str, Path],
                      size: int, threshold: float, reference: Optional[Dict[str, Any]] = None) -> EvalReport:
    report = evaluate_scored(score_captures(pipeline, records, root), size, threshold, pipeline.kind, reference)
    logger.info(
        f"{pipeline.kind}: TP {report.tp} FP {report.fp} TN {report.tn} FN {report.fn} "
        f"(median detection {report.median_detection_time})"
    )
    return report


@dataclass
class SweepCell:
    window: int
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: Optional[float]
    fpr: Optional[float]
    median_detection_s: Optional[float]


@dataclass
class SweepResult:
    cells: List[SweepCell] = field(default_factory=list)

    def cell(self, window: int, threshold: float) -> SweepCell:
        for c in self.cells:
            if c.window == window and abs(c.threshold - threshold) < 1e-12:
                return c
        raise KeyError((window, threshold))

    def fpr_monotone(self) -> Dict[float, bool]:
        """Per threshold: FPR never rises as the window grows."""
        result = {}
        for threshold in sorted({c.threshold for c in self.cells}):
            row = sorted((c for c in self.cells if c.threshold == threshold), key=lambda c: c.window)
            rates = [c.fpr for c in row if c.fpr is not None]
            result[threshold] = all(a >= b for a, b in zip(rates, rates[1:]))
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cells': [asdict(c) for c in self.cells],
            'fpr_monotone': {str(k): v for k, v in self.fpr_monotone().items()},
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path


def sweep(scored: Sequence[ScoredCapture], windows: Sequence[int], thresholds: Sequence[float]) -> SweepResult:
    result = SweepResult()
    for window in windows:
        for threshold in thresholds:
            report = evaluate_scored(scored, int(window), float(threshold))
            result.cells.append(SweepCell(
                window=int(window), threshold=float(threshold),
                tp=report.tp, fp=report.fp, tn=report.tn, fn=report.fn,
                tpr=report.tpr, fpr=report.fpr, median_detection_s=report.median_detection_time,
            ))
    return result
