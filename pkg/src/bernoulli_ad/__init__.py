"""Masked Bernoulli latent diffusion for unsupervised anomaly detection."""
from .anomaly import (AnomalyResult, InferenceConfig, MaskState, anomaly_map, detect,
                      mask_fraction, masked_inference, postprocess, unmasked_inference)
from .codec import BinaryAutoencoder, BitplaneCodec, CodecSpec, binarize, train_autoencoder
from .datagen import PhantomSpec, generate_anomalous, generate_healthy, make_splits
from .denoiser import Architecture, ConstantDenoiser, ConvDenoiser, Denoiser, OracleDenoiser
from .diffusion import (bernoulli_sample, forward_jump, forward_step, generate, posterior_theta,
                        sample_step)
from .estimator import MaskedBernoulliDetector
from .eval import auprc, dice, grid_search, psnr
from .rng import RngStream
from .schedule import NoiseSchedule, build_schedule, flip_probability
from .training import TrainConfig, diffusion_loss, train_diffusion

__version__ = "0.1.0"
