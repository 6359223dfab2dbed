"""Topic-attentive two-branch classifier for question/answer interviews."""

from .config import Dims, TrainingConfig
from .data import InterviewSample, SplitManifest, SynthSpec, TopicCatalog, TopicEntry, Waveform, synth_generate
from .estimator import TOATClassifier
from .model import TOATModel

__all__ = [
    "Dims",
    "InterviewSample",
    "SplitManifest",
    "SynthSpec",
    "TOATClassifier",
    "TOATModel",
    "TopicCatalog",
    "TopicEntry",
    "TrainingConfig",
    "Waveform",
    "synth_generate",
]

__version__ = "0.1.0"
