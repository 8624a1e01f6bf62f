"""Bernoulli forward process, exact posterior and ancestral sampling."""
from __future__ import annotations

import numpy as np

from .rng import RngStream, as_stream
from .schedule import NoiseSchedule, flip_probability
from .validation import check_bits, check_probabilities

_TINY = 1e-300


class DegeneratePosteriorError(FloatingPointError):
    """Both posterior numerators vanish; ``entries`` holds their indices."""

    def __init__(self, entries):
        self.entries = entries
        n = len(entries[0]) if len(entries) else 0
        super().__init__(f"posterior normalizer underflows at {n} entries, "
                         f"first: {tuple(int(e[0]) for e in entries)}")


class InvalidPredictionError(ValueError):
    pass


def bernoulli_sample(p, rng) -> np.ndarray:
    """Draw independent bits with ``P(bit = 1) = p`` entrywise."""
    p = check_probabilities(p)
    u = as_stream(rng).random(p.shape)
    return (u < p).astype(np.uint8)


def xor(a, b) -> np.ndarray:
    return np.bitwise_xor(np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8))


def forward_step(z_prev, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """One step of q(z_t | z_{t-1}) = B((1 - beta_t) z_{t-1} + beta_t / 2)."""
    z_prev = check_bits(z_prev, "z_prev")
    beta = schedule.beta_at(t)
    return bernoulli_sample((1.0 - beta) * z_prev + 0.5 * beta, rng)


def forward_jump(z0, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Sample z_t directly: z_0 XOR eps with eps ~ B((1 - alpha_bar_t) / 2)."""
    z0 = check_bits(z0, "z0")
    p = flip_probability(schedule, t)
    eps = bernoulli_sample(np.full(z0.shape, p), rng)
    return xor(z0, eps)


def posterior_theta(z_t, z0_est, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Parameter of q(z_{t-1} | z_t, z_0) for a (possibly soft) estimate of z_0.

    The prior on z_{t-1} given z_0 uses alpha_bar_{t-1} and b_{t-1}, with
    alpha_bar_0 = 1 and b_0 = 0 so the t = 1 step returns the clean code for
    a binary estimate.
    """
    z_t = check_bits(z_t, "z_t").astype(np.float64)
    z0 = check_probabilities(z0_est, "z0_est")
    if z_t.shape != z0.shape:
        z_t, z0 = np.broadcast_arrays(z_t, z0)
    beta = schedule.beta_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    b_prev = schedule.b_at(t - 1)
    like1 = (1.0 - beta) * z_t + 0.5 * beta
    like0 = (1.0 - beta) * (1.0 - z_t) + 0.5 * beta
    num1 = like1 * (ab_prev * z0 + b_prev)
    num0 = like0 * (ab_prev * (1.0 - z0) + b_prev)
    norm = num1 + num0
    bad = norm < _TINY
    if bad.any():
        raise DegeneratePosteriorError(np.nonzero(bad))
    return np.clip(num1 / norm, 0.0, 1.0)


def sample_step(z_t, z0_est, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Draw z_{t-1} ~ B(theta_post(z_t, z0_est))."""
    return bernoulli_sample(posterior_theta(z_t, z0_est, t, schedule), rng)


def predict_z0(z_t, eps) -> np.ndarray:
    """Clean-code estimate |z_t - eps| from predicted flip probabilities."""
    return np.abs(np.asarray(z_t, dtype=np.float64) - eps)


def checked_prediction(denoiser, z_t, t: int) -> np.ndarray:
    eps = np.asarray(denoiser.predict(z_t, t), dtype=np.float64)
    if eps.shape != np.shape(z_t):
        raise InvalidPredictionError(
            f"denoiser returned shape {eps.shape} for input {np.shape(z_t)}")
    if np.isnan(eps).any() or eps.min() < 0.0 or eps.max() > 1.0:
        raise InvalidPredictionError("denoiser output outside [0, 1]")
    return eps


def generate(denoiser, shape, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Ancestral sampling from z_T ~ B(1/2) down to z_0."""
    rng = as_stream(rng)
    z = bernoulli_sample(np.full(tuple(shape), 0.5), rng)
    for t in range(schedule.T, 0, -1):
        eps = checked_prediction(denoiser, z, t)
        z = sample_step(z, predict_z0(z, eps), t, schedule, rng)
    return z
