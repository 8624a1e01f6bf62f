"""Synthetic phantom images with optional injected anomalies.

Healthy phantoms are an outer tissue ellipse holding two darker inner
ellipses over a smooth gradient.  Anomalies are discs placed
fully inside the outer ellipse with a positive intensity offset; the returned
mask is the exact union of the disc supports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream, as_stream


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    channels: int = 1
    outer_axes: tuple = (0.32, 0.44)      # fraction of size
    inner_axes: tuple = (0.08, 0.16)
    # healthy intensities stay below 0.5 so only lesions reach the top bit plane
    tissue_band: tuple = (0.36, 0.42)
    inner_bands: tuple = ((0.0, 0.05), (0.18, 0.24))
    gradient_amplitude: float = 0.05
    blob_radius: tuple = (5.0, 8.0)        # pixels
    blob_delta: tuple = (0.50, 0.65)
    blob_count: tuple = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if self.size < 8 or self.channels < 1:
            raise ValueError("size must be >= 8 and channels >= 1")
        lo, hi = self.blob_count
        if not 1 <= lo <= hi:
            raise ValueError("blob_count must satisfy 1 <= lo <= hi")
        if self.blob_radius[0] <= 0 or self.blob_radius[0] > self.blob_radius[1]:
            raise ValueError("invalid blob_radius range")
        if self.blob_delta[0] > self.blob_delta[1]:
            raise ValueError("invalid blob_delta range")


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _ellipse(yy, xx, cy, cx, ay, ax, angle):
    ca, sa = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _healthy(spec: PhantomSpec, rng: RngStream):
    g = rng.generator
    n = spec.size
    yy, xx = _grid(n)
    cy, cx = n / 2 + g.uniform(-0.05, 0.05, 2) * n
    ay, ax = g.uniform(*spec.outer_axes, 2) * n
    angle = g.uniform(-0.3, 0.3)
    outer = _ellipse(yy, xx, cy, cx, ay, ax, angle)
    base = np.zeros((n, n))
    base[outer] = g.uniform(*spec.tissue_band)
    for band in spec.inner_bands:
        iy, ix = g.uniform(*spec.inner_axes, 2) * n
        oy, ox = g.uniform(-0.35, 0.35, 2) * np.array([ay, ax])
        inner = _ellipse(yy, xx, cy + oy, cx + ox, iy, ix, g.uniform(0, np.pi)) & outer
        base[inner] = g.uniform(*band)
    direction = g.uniform(0, 2 * np.pi)
    ramp = (np.cos(direction) * (xx - cx) + np.sin(direction) * (yy - cy)) / n
    base = np.where(outer, base + spec.gradient_amplitude * ramp, 0.0)
    gains = np.concatenate([[1.0], g.uniform(0.8, 1.2, spec.channels - 1)])
    img = np.clip(base[None] * gains[:, None, None], 0.0, 1.0)
    return img, outer, gains


def _blobs(spec: PhantomSpec, outer, rng: RngStream, max_tries=200):
    g = rng.generator
    n = spec.size
    yy, xx = _grid(n)
    mask = np.zeros((n, n), dtype=bool)
    count = int(g.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    deltas = []
    inside = np.argwhere(outer)
    for _ in range(count):
        for _ in range(max_tries):
            r = g.uniform(*spec.blob_radius)
            cy, cx = inside[g.integers(len(inside))] + 0.5
            disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            if disc.any() and not (disc & ~outer).any():
                break
        else:
            continue
        mask |= disc
        deltas.append((disc, g.uniform(*spec.blob_delta)))
    return mask, deltas


def generate_healthy(spec: PhantomSpec, n: int, seed=None, split: str = "healthy") -> np.ndarray:
    """``n`` healthy phantoms shaped ``(n, c, size, size)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = as_stream(spec.seed if seed is None else seed).child("phantom", split)
    return np.stack([_healthy(spec, root.child(i))[0] for i in range(n)])


def generate_anomalous(spec: PhantomSpec, n: int, seed=None, split: str = "anomalous",
                       return_healthy: bool = False):
    """``n`` phantoms with 1-3 bright discs; returns ``(images, masks)``.

    Masks are boolean ``(n, size, size)``.  With ``return_healthy`` the
    anomaly-free counterparts are returned as a third element.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = as_stream(spec.seed if seed is None else seed).child("phantom", split)
    images, masks, healthy = [], [], []
    for i in range(n):
        stream = root.child(i)
        img, outer, gains = _healthy(spec, stream)
        mask, blobs = _blobs(spec, outer, stream.child("blobs"))
        sick = img.copy()
        for disc, delta in blobs:
            sick[:, disc] += delta * gains[:, None]
        images.append(np.clip(sick, 0.0, 1.0))
        masks.append(mask)
        healthy.append(img)
    out = (np.stack(images), np.stack(masks))
    if return_healthy:
        out += (np.stack(healthy),)
    return out


def make_splits(spec: PhantomSpec, n_train: int, n_test_healthy: int, n_test_anomalous: int,
                seed=None) -> dict:
    """Train/test splits drawn from disjoint derived streams."""
    seed = spec.seed if seed is None else seed
    X_anom, masks = generate_anomalous(spec, n_test_anomalous, seed, split="test-anomalous")
    return {
        "train": generate_healthy(spec, n_train, seed, split="train"),
        "test_healthy": generate_healthy(spec, n_test_healthy, seed, split="test-healthy"),
        "test_anomalous": X_anom,
        "test_masks": masks,
    }
