"""
PlantWatch datasets - train/validation/test splits of a capture run and the
grader for labeled submissions.

The training set is the first benign capture. The rest are shuffled with the
split seed; test captures lose their label column and are renamed, and their
truth goes to ``test_truth.json``.
"""

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from collector.main import CaptureRecord, Manifest, load_capture
from harness.errors import GradingError, SplitError

logger = logging.getLogger(__name__)

TRUTH_FILE = "test_truth.json"
SPLIT_FILE = "split.json"


@dataclass
class DatasetSplit:
    train: List[str] = field(default_factory=list)
    validation: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)
    truth: Dict[str, int] = field(default_factory=dict)
    sources: Dict[str, str] = field(default_factory=dict)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        document = {k: v for k, v in asdict(self).items() if k != 'truth'}
        path.write_text(json.dumps(document, indent=2), encoding='utf-8')
        return path


def plan_split(records: List[CaptureRecord], train: int = 1, validation: int = 23, test: int = 58,
               seed: int = 11):
    """Pick (train, validation, test) records without touching any file."""
    records = [r for r in records if r.valid]
    benign = [r for r in records if r.label == 0]
    if len(benign) < train or not benign:
        raise SplitError(f"need at least {max(train, 1)} benign capture(s) for training, have {len(benign)}")
    needed = train + validation + test
    if len(records) < needed:
        raise SplitError(
            f"split {train}/{validation}/{test} needs {needed} captures, have {len(records)} "
            f"({needed - len(records)} short)"
        )
    chosen = benign[:train]
    rest = [r for r in records if r not in chosen]
    order = np.random.default_rng(seed).permutation(len(rest))
    shuffled = [rest[i] for i in order]
    return chosen, shuffled[:validation], shuffled[validation:validation + test]


def split_dataset(manifest: Manifest, root: Union[str, Path], out_dir: Union[str, Path], train: int = 1,
                  validation: int = 23, test: int = 58, seed: int = 11) -> DatasetSplit:
    """Write ``train/``, ``validation/`` and ``test/`` under ``out_dir``."""
    root, out_dir = Path(root), Path(out_dir)
    train_set, validation_set, test_set = plan_split(manifest.captures, train, validation, test, seed)
    split = DatasetSplit()

    for folder, records, names in (("train", train_set, split.train),
                                   ("validation", validation_set, split.validation)):
        (out_dir / folder).mkdir(parents=True, exist_ok=True)
        for record in records:
            name = f"{record.name}.csv"
            shutil.copyfile(root / record.path, out_dir / folder / name)
            names.append(name)
            split.sources[f"{folder}/{name}"] = record.name

    (out_dir / "test").mkdir(parents=True, exist_ok=True)
    for i, record in enumerate(test_set):
        name = f"test_{i:03d}.csv"
        df = load_capture(root / record.path)
        df.drop(columns=['label'], errors='ignore').to_csv(out_dir / "test" / name, index=False,
                                                           lineterminator='\n', float_format='%.17g')
        split.test.append(name)
        split.truth[name] = record.label
        split.sources[f"test/{name}"] = record.name

    (out_dir / TRUTH_FILE).write_text(json.dumps(split.truth, indent=2), encoding='utf-8')
    split.save(out_dir / SPLIT_FILE)
    logger.info(f"Split {len(split.train)}/{len(split.validation)}/{len(split.test)} written to {out_dir}")
    return split


def load_truth(path: Union[str, Path]) -> Dict[str, int]:
    try:
        return {k: int(v) for k, v in json.loads(Path(path).read_text(encoding='utf-8')).items()}
    except FileNotFoundError:
        raise GradingError(f"truth file {path} not found") from None


def load_submission(path: Union[str, Path]) -> Dict[str, int]:
    """Read a ``file,label`` CSV."""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise GradingError(f"submission {path} not found") from None
    if not {'file', 'label'} <= set(df.columns):
        raise GradingError("submission needs 'file' and 'label' columns")
    if df['file'].duplicated().any():
        raise GradingError(f"duplicate files in submission: {sorted(df.loc[df['file'].duplicated(), 'file'])}")
    labels = pd.to_numeric(df['label'], errors='coerce')
    if labels.isna().any() or not labels.isin([0, 1]).all():
        raise GradingError("labels must be 0 (benign) or 1 (attack)")
    return {str(f): int(v) for f, v in zip(df['file'], labels)}


@dataclass
class Grade:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    wrong: List[str] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.fp + self.fn

    @property
    def accuracy(self) -> Optional[float]:
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / total if total else None


def grade(truth: Mapping[str, int], submission: Mapping[str, int]) -> Grade:
    missing = sorted(set(truth) - set(submission))
    unknown = sorted(set(submission) - set(truth))
    if missing or unknown:
        raise GradingError(f"submission does not match the test set (missing {missing}, unknown {unknown})")
    result = Grade()
    for name in sorted(truth):
        actual, predicted = truth[name], submission[name]
        if actual == 1:
            result.tp += predicted == 1
            result.fn += predicted == 0
        else:
            result.fp += predicted == 1
            result.tn += predicted == 0
        if actual != predicted:
            result.wrong.append(name)
    return result
