"""Flip-probability predictors eps_theta(z_t, t)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .rng import as_stream
from .validation import ShapeError, check_bits

# keeps sigmoid outputs strictly inside (0, 1) in float64
_OUT_CLIP = 1e-12


class Denoiser:
    """Interface: ``predict(z_t, t)`` returns per-entry flip probabilities."""

    n_params = 0

    def predict(self, z_t, t):
        raise NotImplementedError


class OracleDenoiser(Denoiser):
    """Test double that knows the clean code and returns ``z_t XOR target``."""

    def __init__(self, target, epsilon_clip: float = 1e-6):
        self.target = check_bits(target, "target")
        self.epsilon_clip = float(epsilon_clip)

    def predict(self, z_t, t):
        z_t = check_bits(z_t, "z_t")
        if z_t.shape[-self.target.ndim:] != self.target.shape:
            raise ShapeError(f"input {z_t.shape} incompatible with target {self.target.shape}")
        flips = np.bitwise_xor(z_t, self.target).astype(np.float64)
        return np.clip(flips, self.epsilon_clip, 1.0 - self.epsilon_clip)


class ConstantDenoiser(Denoiser):
    """Predicts the same flip probability everywhere."""

    def __init__(self, value: float = 0.5):
        if not 0.0 <= value <= 1.0:
            raise ValueError("value must lie in [0, 1]")
        self.value = float(value)

    def predict(self, z_t, t):
        return np.full(np.shape(z_t), self.value)


@dataclass(frozen=True)
class Architecture:
    """Shape of a :class:`ConvDenoiser`; the parameter count is a function of it."""

    channels: int
    width: int = 32
    n_blocks: int = 3
    kernel: int = 3
    emb_dim: int = 32
    recenter: bool = True

    def to_dict(self):
        return asdict(self)


class ConvDenoiser(Denoiser):
    """Small residual CNN with sinusoidal time conditioning and sigmoid output.

    Each residual block computes ``h + conv(silu(conv(silu(h)) + W_b emb(t)))``.
    The output convolution is zero-initialised so a fresh model predicts 0.5.
    """

    def __init__(self, arch: Architecture, params=None, seed: int = 0, zero_output: bool = True):
        self.arch = arch
        space = nn.ParamSpace()
        a = arch
        self.conv_in = nn.Conv2d(space, "conv_in", a.channels, a.width, a.kernel)
        self.blocks = []
        for i in range(a.n_blocks):
            self.blocks.append((
                nn.Conv2d(space, f"block{i}.conv1", a.width, a.width, a.kernel),
                nn.Dense(space, f"block{i}.temb", a.emb_dim, a.width),
                nn.Conv2d(space, f"block{i}.conv2", a.width, a.width, a.kernel),
            ))
        self.conv_out = nn.Conv2d(space, "conv_out", a.width, a.channels, a.kernel)
        self.space = space
        if params is None:
            zero = ("conv_out",) if zero_output else ()
            params = space.init(as_stream(seed).child("init"), zero=zero)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (space.size,):
            raise ShapeError(f"expected {space.size} parameters, got {params.shape}")
        self.params = params.copy()

    @property
    def n_params(self):
        return self.space.size

    def _prepare(self, z_t, t):
        z = check_bits(z_t, "z_t").astype(np.float64)
        single = z.ndim == 3
        if single:
            z = z[None]
        if z.ndim != 4 or z.shape[1] != self.arch.channels:
            raise ShapeError(f"expected (N, {self.arch.channels}, H, W) codes, got {np.shape(z_t)}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
        x = 2.0 * z - 1.0 if self.arch.recenter else z
        return x, t, single

    def _forward(self, theta, x, t):
        emb = nn.sinusoidal_embedding(t, self.arch.emb_dim)
        h, c_in = self.conv_in.forward(theta, x)
        caches = []
        for conv1, temb, conv2 in self.blocks:
            a1, s1 = nn.silu(h)
            u1, c1 = conv1.forward(theta, a1)
            e, _ = temb.forward(theta, emb)
            u1 = u1 + e[:, :, None, None]
            a2, s2 = nn.silu(u1)
            u2, c2 = conv2.forward(theta, a2)
            caches.append((h, s1, c1, u1, s2, c2))
            h = h + u2
        a, s = nn.silu(h)
        logits, c_out = self.conv_out.forward(theta, a)
        return logits, (emb, c_in, caches, h, s, c_out)

    def _backward(self, theta, dlogits, cache):
        emb, c_in, caches, h, s, c_out = cache
        grad = np.zeros_like(theta)
        da = self.conv_out.backward(theta, grad, dlogits, c_out)
        dh = nn.silu_backward(da, h, s)
        for (conv1, temb, conv2), (h_in, s1, c1, u1, s2, c2) in zip(
                reversed(self.blocks), reversed(caches)):
            da2 = conv2.backward(theta, grad, dh, c2)
            du1 = nn.silu_backward(da2, u1, s2)
            temb.backward(theta, grad, du1.sum(axis=(2, 3)), emb)
            da1 = conv1.backward(theta, grad, du1, c1)
            dh = dh + nn.silu_backward(da1, h_in, s1)
        self.conv_in.backward(theta, grad, dh, c_in, need_input_grad=False)
        return grad

    def logits(self, z_t, t, params=None):
        x, t, single = self._prepare(z_t, t)
        out, _ = self._forward(self.params if params is None else params, x, t)
        return out[0] if single else out

    def predict(self, z_t, t):
        return np.clip(expit(self.logits(z_t, t)), _OUT_CLIP, 1.0 - _OUT_CLIP)

    def predict_with_gradients(self, z_t, t, upstream):
        """Forward output and d(sum(upstream * output)) / d(params)."""
        x, tt, single = self._prepare(z_t, t)
        logits, cache = self._forward(self.params, x, tt)
        p = expit(logits)
        upstream = np.asarray(upstream, dtype=np.float64)
        if single:
            upstream = upstream[None]
        if upstream.shape != p.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {p.shape}")
        grad = self._backward(self.params, upstream * p * (1.0 - p), cache)
        out = np.clip(p, _OUT_CLIP, 1.0 - _OUT_CLIP)
        return (out[0] if single else out), grad

    def bce_with_gradients(self, z_t, t, target):
        """Mean binary cross-entropy of the predictions against ``target`` and its gradient."""
        x, tt, single = self._prepare(z_t, t)
        target = np.asarray(target, dtype=np.float64)
        if single:
            target = target[None]
        logits, cache = self._forward(self.params, x, tt)
        if target.shape != logits.shape:
            raise ShapeError(f"target shape {target.shape} != output shape {logits.shape}")
        n = logits.size
        loss = float(np.mean(np.logaddexp(0.0, logits) - target * logits))
        grad = self._backward(self.params, (expit(logits) - target) / n, cache)
        return loss, grad

    def to_state(self) -> dict:
        return {"arch": self.arch.to_dict(), "params": self.params.copy()}

    @classmethod
    def from_state(cls, state: dict) -> "ConvDenoiser":
        return cls(Architecture(**state["arch"]), params=state["params"])
