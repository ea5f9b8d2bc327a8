"""Detector errors."""


class TrainingError(Exception):
    """A model cannot be fitted to the given rows."""


class DimensionError(ValueError):
    """Rows do not have the feature count a model was trained with."""
