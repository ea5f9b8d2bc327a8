"""
PlantWatch detection - one-class SVM with a sliding-window alarm, plus
Isolation Forest, LOF and Gaussian baselines behind the same window.
"""

from detection.errors import DimensionError, TrainingError
from detection.gaussian import GaussianModel, choose_epsilon, fit_gaussian, gaussian_score
from detection.iforest import IsolationForestModel, average_path_length, fit_score_iforest
from detection.lof import LofModel, score_lof
from detection.ocsvm import OcsvmModel, fit_ocsvm, ocsvm_predict
from detection.pipeline import KINDS, DetectorPipeline, Monitor, MonitorRecord
from detection.window import SlidingWindow, WindowVerdict, first_alarm, run_window, window_classify
