"""Feature collection from the PLC into labeled CSV captures."""

from collector.main import (
    BENIGN, CaptureRecord, CaptureWriter, Collector, FeatureVector, Manifest, Snapshot, capture_header,
    feature_columns, feature_matrix, featurize, load_capture, poll_sample,
)
