"""Harness errors."""


class CaptureAborted(Exception):
    """A component failed while a capture was being recorded."""


class ReportError(Exception):
    """Captures cannot be combined into one evaluation report."""


class SplitError(Exception):
    """Too few captures for the requested dataset split."""


class GradingError(Exception):
    """A submission does not match the held-out test set."""
