"""Testbed orchestration, capture campaigns, evaluation and dataset splits."""

from harness.campaign import Campaign, CampaignConfig, platform_scenarios, run_campaign, smoke_subset
from harness.dataset import DatasetSplit, Grade, grade, load_submission, load_truth, plan_split, split_dataset
from harness.errors import CaptureAborted, GradingError, ReportError, SplitError
from harness.evaluate import (
    CaptureOutcome, EvalReport, ScoredCapture, SweepResult, detection_time, evaluate_captures, evaluate_scored,
    judge, score_captures, sweep, train_pipeline,
)
from harness.testbed import Testbed, run_capture
