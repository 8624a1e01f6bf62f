"""BCE training of the flip predictor on clean binary codes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .denoiser import ConvDenoiser, Denoiser
from .nn import make_optimizer
from .rng import as_stream
from .schedule import NoiseSchedule
from .validation import check_bits

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    iterations: int = 1000
    optimizer: str = "adam"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def bce(p, target) -> float:
    """Mean binary cross-entropy of probabilities ``p`` against binary ``target``."""
    p = np.asarray(p, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log1p(-p))))


def _noisy_batch(z0, t, schedule, rng):
    flip = (1.0 - schedule.alpha_bar[np.asarray(t) - 1]) / 2.0
    flip = flip.reshape((-1,) + (1,) * (z0.ndim - 1))
    eps = (rng.random(z0.shape) < flip).astype(np.uint8)
    return np.bitwise_xor(z0, eps)


def diffusion_loss(denoiser: Denoiser, z0, t, schedule: NoiseSchedule, rng):
    """Noise ``z0`` to step ``t`` and score the predicted flips against ``z_t XOR z0``.

    ``z0`` may be one code ``(C, H, W)`` or a batch with one ``t`` per item.
    Returns ``(loss, grad)``; ``grad`` is empty for parameter-free denoisers.
    """
    rng = as_stream(rng)
    z0 = check_bits(z0, "z0")
    single = z0.ndim == 3
    zb = z0[None] if single else z0
    tb = np.broadcast_to(np.asarray(t, dtype=np.int64), (zb.shape[0],))
    if tb.min() < 1 or tb.max() > schedule.T:
        raise IndexError(f"timestep outside [1, {schedule.T}]")
    z_t = _noisy_batch(zb, tb, schedule, rng)
    target = np.bitwise_xor(z_t, zb)
    if isinstance(denoiser, ConvDenoiser):
        return denoiser.bce_with_gradients(z_t, tb, target)
    preds = np.stack([denoiser.predict(z_t[i], int(tb[i])) for i in range(zb.shape[0])])
    return bce(preds, target), np.zeros(denoiser.n_params)


def train_diffusion(dataset, denoiser: ConvDenoiser, schedule: NoiseSchedule,
                    config: TrainConfig, checkpoint_path=None, callback=None):
    """Fit ``denoiser`` in place; returns ``(denoiser, loss_history)``.

    Each iteration draws a batch with replacement and one uniform timestep per
    item, then takes a single optimizer step on the mean BCE.
    """
    codes = np.asarray(dataset)
    if codes.ndim == 3:
        raise ValueError("dataset must be a sequence of codes shaped (C, H, W)")
    if len(codes) == 0:
        raise ValueError("dataset is empty")
    if codes.dtype == object:
        raise ValueError("dataset codes must share one shape")
    codes = check_bits(codes, "dataset")
    rng = as_stream(config.seed).child("train-diffusion")
    opt = make_optimizer(config.optimizer, config.learning_rate)
    history = np.empty(config.iterations)
    for it in range(config.iterations):
        idx = rng.integers(0, len(codes), size=config.batch_size)
        t = rng.integers(1, schedule.T + 1, size=config.batch_size)
        loss, grad = diffusion_loss(denoiser, codes[idx], t, schedule, rng)
        opt.step(denoiser.params, grad)
        history[it] = loss
        if callback is not None:
            callback(it, loss)
        if checkpoint_path and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            from .io import save_checkpoint
            save_checkpoint(checkpoint_path, denoiser, schedule, iteration=it + 1, seed=config.seed)
        if it % 100 == 0:
            logger.debug("iter %d loss %.5f", it, loss)
    return denoiser, history
