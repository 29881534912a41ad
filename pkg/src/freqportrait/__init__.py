"""Frequency-modulated talking-portrait synthesis at desk scale."""

from .data import (FULL_HEAD, LOWER_HALF, AudioFeatureWindow, Frame, HeadBox, MaskKind, MaskSpec,
                   Sample, SynthConfig, apply_mask, generate_synthetic_dataset, load_features,
                   load_frames, sample_training_pair, save_features, window_audio)
from .network import ModelConfig, build_model, load_checkpoint, model_forward, save_checkpoint
from .spectral import Spectrum, fft2, frequency_loss, ifft2, radial_energy_profile
from .training import LossWeights, TrainConfig, total_loss, train

__version__ = "0.1.0"
