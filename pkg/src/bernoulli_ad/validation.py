"""Input validation helpers shared by the estimators and the functional API."""
from __future__ import annotations

import numpy as np


class InvalidProbabilityError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def check_probabilities(p, name: str = "p") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.isnan(p).any():
        raise InvalidProbabilityError(f"{name} contains NaN")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise InvalidProbabilityError(f"{name} has entries outside [0, 1]")
    return p


def check_bits(z, name: str = "z") -> np.ndarray:
    """Return ``z`` as a uint8 array, raising unless every entry is 0 or 1."""
    z = np.asarray(z)
    if z.dtype == np.bool_:
        return z.astype(np.uint8)
    if z.size and not np.isin(z, (0, 1)).all():
        raise ValueError(f"{name} must be binary (entries 0 or 1)")
    return z.astype(np.uint8)


def check_images(X, ndim: int = 4, name: str = "X") -> np.ndarray:
    """Validate a batch of images shaped ``(n, c, h, w)`` with values in [0, 1].

    A single ``(c, h, w)`` image or a ``(n, h, w)`` stack of single-channel
    images is promoted when ``ndim == 4``.
    """
    X = np.asarray(X, dtype=np.float64)
    if ndim == 4 and X.ndim == 3:
        X = X[:, None]
    if X.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {X.shape}")
    if min(X.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


def check_same_shape(a, b, names=("a", "b")):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
    return a, b
