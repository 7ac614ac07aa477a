"""Side-channel intrusion detection for PLC user programs.

The package bundles a deterministic trace simulator, alignment and
interrupt filtering, SAD/XCORR and Gaussian-template distinguishers, ROC and
EER evaluation, and a two-layer (runtime, then EM profile) IDS.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .distinguishers import SimpleTemplateClassifier
from .evaluation import ScoreSet, eer, evaluate_scores, recognition_matrix, roc_curve
from .grouping import ClassKey, Grouping
from .ids import IdsProfile, Outcome, Verdict, check_trace, spot_check
from .preprocess import AlignmentConfig, FilterConfig, TraceAligner
from .simulator import SimConfig, generate_corpus
from .templates import GaussianTemplateClassifier, LdaTransformer, TemplateModel
from .trace_core import Trace, TraceLabel, TraceSet, load_traceset, save_traceset

__all__ = [
    "AlignmentConfig", "ClassKey", "FilterConfig", "GaussianTemplateClassifier", "Grouping",
    "IdsProfile", "LdaTransformer", "Outcome", "PipelineConfig", "ScoreSet", "SimConfig",
    "SimpleTemplateClassifier", "TemplateModel", "Trace", "TraceAligner", "TraceLabel",
    "TraceSet", "Verdict", "check_trace", "eer", "evaluate_scores", "generate_corpus",
    "load_config", "load_traceset", "recognition_matrix", "roc_curve", "save_traceset",
    "spot_check",
]
