"""Masked Bernoulli denoising for anomaly detection.

The reverse chain starts from the input code noised to level ``L``.  At each
step entries whose predicted flip probability exceeds ``P`` join a monotone
mask; masked entries take the model's clean estimate and the rest keep the
original code before sampling the next state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .codec import binarize
from .diffusion import checked_prediction, posterior_theta, predict_z0
from .rng import RngStream
from .schedule import NoiseSchedule, flip_probability
from .validation import ShapeError, check_images, check_same_shape


@dataclass
class InferenceConfig:
    L: int = 200
    P: float = 0.5
    binarize_mode: str = "sample"
    seed: int = 0
    median_kernel: int = 5
    threshold: float = 0.5
    min_component: int = 10
    normalize_map: bool = False
    keep_trace: bool = False

    def validate(self, schedule: NoiseSchedule = None):
        if self.L < 1 or (schedule is not None and self.L > schedule.T):
            raise ValueError(f"noise level L={self.L} outside [1, T]")
        if not 0.0 <= self.P < 1.0:
            raise ValueError(f"threshold P={self.P} must lie in [0, 1)")
        if self.binarize_mode not in ("sample", "threshold"):
            raise ValueError(f"unknown binarize mode {self.binarize_mode!r}")
        return self


@dataclass
class MaskState:
    """Monotone latent mask (1 = replace with the model estimate)."""

    mask: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape, dtype=np.uint8))

    def update(self, eps, P):
        self.mask |= (eps > P).astype(np.uint8)
        self.history.append(mask_fraction(self.mask))
        return self.mask


@dataclass
class AnomalyResult:
    reconstruction: np.ndarray
    anomaly_map: np.ndarray
    segmentation: np.ndarray
    mask_fraction: float
    z: np.ndarray
    z0: np.ndarray
    mask: np.ndarray
    mask_history: list
    trace: list = None


def stitch(mask, z0_est, z):
    """Masked entries from the estimate, unmasked entries from the original code."""
    return np.where(np.asarray(mask, dtype=bool), z0_est, np.asarray(z, dtype=np.float64))


def mask_fraction(mask) -> float:
    """Percentage of masked entries of an array or :class:`MaskState`."""
    mask = np.asarray(mask.mask if isinstance(mask, MaskState) else mask)
    return 100.0 * float(np.count_nonzero(mask)) / mask.size


def anomaly_map(x, x_hat) -> np.ndarray:
    """Channel sum of squared differences; inputs are ``(..., c, h, w)``."""
    x, x_hat = check_same_shape(np.asarray(x, dtype=np.float64),
                                np.asarray(x_hat, dtype=np.float64), ("x", "x_hat"))
    if x.ndim < 3:
        raise ShapeError("images must have a channel axis (c, h, w)")
    return np.sum((x - x_hat) ** 2, axis=-3)


def postprocess(a, median_kernel: int = 5, threshold: float = 0.5, min_component: int = 10,
                normalize: bool = False) -> np.ndarray:
    """Median filter (edge-clamped), threshold, drop small 8-connected components."""
    if median_kernel < 1 or median_kernel % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 1, got {median_kernel}")
    if threshold < 0 or min_component < 0:
        raise ValueError("threshold and min_component must be non-negative")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"anomaly map must be 2-d, got {a.shape}")
    if normalize:
        span = a.max() - a.min()
        a = (a - a.min()) / span if span > 0 else np.zeros_like(a)
    filtered = ndimage.median_filter(a, size=median_kernel, mode="nearest")
    seg = filtered > threshold
    if min_component > 0 and seg.any():
        labels, n = ndimage.label(seg, structure=np.ones((3, 3), dtype=bool))
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_component
        keep[0] = False
        seg = keep[labels]
    return seg


def _image_stream(seed, index) -> RngStream:
    return RngStream(seed).child("inference", int(index))


def denoise_chain(z, L: int, denoiser, schedule: NoiseSchedule, streams, P=None,
                  keep_trace: bool = False):
    """Run the (masked) reverse chain on a batch of codes ``(N, C, H, W)``.

    ``streams`` holds one :class:`RngStream` per item, consumed in order, so the
    result for an item does not depend on the rest of the batch.  ``P=None``
    disables masking.  Returns ``(z0, mask, history, trace)``; ``history`` is an
    ``(N, L)`` array of mask percentages after each step.
    """
    z = np.asarray(z, dtype=np.uint8)
    N = z.shape[0]
    if len(streams) != N:
        raise ValueError("need one rng stream per item")
    flip = flip_probability(schedule, L)
    noise = np.stack([(s.random(z.shape[1:]) < flip) for s in streams]).astype(np.uint8)
    z_t = np.bitwise_xor(z, noise)
    mask = np.zeros_like(z) if P is not None else np.ones_like(z)
    history = np.empty((N, L))
    trace = [] if keep_trace else None
    for i, t in enumerate(range(L, 0, -1)):
        eps = checked_prediction(denoiser, z_t, t)
        z0_est = predict_z0(z_t, eps)
        if P is not None:
            mask |= (eps > P).astype(np.uint8)
            z0_stitched = stitch(mask, z0_est, z)
        else:
            z0_stitched = z0_est
        history[:, i] = 100.0 * mask.reshape(N, -1).mean(axis=1)
        theta = posterior_theta(z_t, z0_stitched, t, schedule)
        z_t = np.stack([(s.random(z.shape[1:]) < th) for s, th in zip(streams, theta)]).astype(np.uint8)
        if keep_trace:
            trace.append({"t": t, "z0_est": z0_est, "z0_stitched": z0_stitched,
                          "mask_fraction": history[:, i].copy()})
    return z_t, mask, history, trace


def detect(X, codec, denoiser, schedule: NoiseSchedule, cfg: InferenceConfig, masked: bool = True,
           indices=None):
    """Batch version of :func:`masked_inference`; returns a list of results.

    ``indices`` label each image's rng stream (default ``0..n-1``).
    """
    cfg.validate(schedule)
    X = check_images(X)
    n = len(X)
    indices = range(n) if indices is None else indices
    streams = [_image_stream(cfg.seed, i) for i in indices]
    y = codec.encode(X)
    z = np.stack([binarize(y[i], cfg.binarize_mode, streams[i]) for i in range(n)])
    P = cfg.P if masked else None
    z0, mask, history, trace = denoise_chain(z, cfg.L, denoiser, schedule, streams, P,
                                             cfg.keep_trace)
    x_hat = codec.decode(z0)
    a = anomaly_map(X, x_hat)
    results = []
    for i in range(n):
        seg = postprocess(a[i], cfg.median_kernel, cfg.threshold, cfg.min_component,
                          cfg.normalize_map)
        item_trace = None
        if trace is not None:
            item_trace = [{"t": s["t"], "z0_est": s["z0_est"][i],
                           "z0_stitched": s["z0_stitched"][i],
                           "mask_fraction": float(s["mask_fraction"][i])} for s in trace]
        results.append(AnomalyResult(
            reconstruction=x_hat[i], anomaly_map=a[i], segmentation=seg,
            mask_fraction=mask_fraction(mask[i]) if masked else 100.0,
            z=z[i], z0=z0[i], mask=mask[i], mask_history=list(history[i]),
            trace=item_trace))
    return results


def masked_inference(x, codec, denoiser, schedule: NoiseSchedule, cfg: InferenceConfig,
                     index: int = 0) -> AnomalyResult:
    """Reconstruct a pseudo-healthy version of one image ``(c, h, w)`` and score it."""
    return detect(np.asarray(x)[None], codec, denoiser, schedule, cfg, True, [index])[0]


def unmasked_inference(x, codec, denoiser, schedule: NoiseSchedule, L: int, seed: int,
                       cfg: InferenceConfig = None, index: int = 0) -> AnomalyResult:
    """Plain noise-and-denoise reconstruction; mask fraction is reported as 100."""
    cfg = InferenceConfig(L=L, seed=seed) if cfg is None else \
        InferenceConfig(**{**cfg.__dict__, "L": L, "seed": seed})
    return detect(np.asarray(x)[None], codec, denoiser, schedule, cfg, False, [index])[0]
