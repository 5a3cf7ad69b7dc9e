"""Single-channel EEG sleep staging: EDF ingestion, a from-scratch tensor
engine, a multi-scale dual-attention 1-D CNN, weighted-loss training, and
the full evaluation metric suite."""

__version__ = "0.1.0"

from .edf import EegRecording, LabeledEpoch, StageLabel  # noqa: F401
from .model import ModelConfig, ModelParams  # noqa: F401
