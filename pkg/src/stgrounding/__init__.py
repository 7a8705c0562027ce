"""Spatio-temporal video grounding with time-aligned queries, in numpy."""

from .model import GroundingModel, ModelConfig
from .losses import LossWeights, total_loss
from .inference import DecodedTube, decode_tube
from .metrics import MetricReport

__version__ = "0.1.0"
