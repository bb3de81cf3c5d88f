"""Semi-supervised singing-voice separation with a masking network and LSGAN critics."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dsp import AudioClip, StftConfig
from .estimator import SpectralFrontEnd, VoiceSeparator
from .losses import LossWeights
from .metrics import MetricReport, bss_eval, decompose, median_report
from .models import MaskNetwork, MaskNetworkConfig, MultiScaleDiscriminator, DiscriminatorConfig
from .training import TrainingConfig, TrainState, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "CheckpointError", "DiscriminatorConfig", "LossWeights", "MaskNetwork",
    "MaskNetworkConfig", "MetricReport", "MultiScaleDiscriminator", "SpectralFrontEnd",
    "StftConfig", "TrainState", "TrainingConfig", "VoiceSeparator", "bss_eval", "decompose",
    "load_checkpoint", "median_report", "run_training", "save_checkpoint", "train_step",
]
