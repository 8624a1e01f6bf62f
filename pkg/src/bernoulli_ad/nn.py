"""Minimal numpy layers with hand-written reverse-mode gradients.

All parameters of a model live in one flat float64 vector; layers keep
offsets into it.  ``forward`` returns ``(output, cache)`` and ``backward``
accumulates parameter gradients into a flat vector of the same layout and
returns the gradient with respect to the layer input.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class ParamSpace:
    """Allocates named slots in a flat parameter vector."""

    def __init__(self):
        self.slots = []  # (name, shape, offset, fan_in, init)
        self.size = 0

    def add(self, name, shape, fan_in=None, init="uniform"):
        n = int(np.prod(shape))
        self.slots.append((name, tuple(shape), self.size, fan_in, init))
        self.size += n
        return self.size - n

    def view(self, theta, offset, shape):
        return theta[offset:offset + int(np.prod(shape))].reshape(shape)

    def init(self, rng, zero=()):
        """Fan-in scaled uniform weights, zero biases; ``zero`` names slots to zero out."""
        theta = np.zeros(self.size)
        gen = rng.generator
        for name, shape, off, fan_in, init in self.slots:
            n = int(np.prod(shape))
            if init == "zeros" or name in zero or any(name.startswith(z + ".") for z in zero):
                continue
            bound = 1.0 / math.sqrt(fan_in)
            theta[off:off + n] = gen.uniform(-bound, bound, n)
        return theta

    def names(self):
        return [s[0] for s in self.slots]


def silu(x):
    s = expit(x)
    return x * s, s


def silu_backward(dy, x, s):
    return dy * (s + x * s * (1.0 - s))


class Conv2d:
    """Stride-1 'same' convolution with zero padding."""

    def __init__(self, space: ParamSpace, name: str, cin: int, cout: int, k: int = 3):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.cin, self.cout, self.k = cin, cout, k
        self.space = space
        self.w_off = space.add(f"{name}.weight", (cout, cin * k * k), fan_in=cin * k * k)
        self.b_off = space.add(f"{name}.bias", (cout,), init="zeros")
        self.name = name

    def _cols(self, x):
        B, C, H, W = x.shape
        k, p = self.k, self.k // 2
        if k == 1:
            return x.transpose(0, 2, 3, 1).reshape(B * H * W, C)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * k * k)

    def forward(self, theta, x):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ValueError(f"{self.name}: expected (B, {self.cin}, H, W), got {x.shape}")
        B, _, H, W = x.shape
        Wm = self.space.view(theta, self.w_off, (self.cout, self.cin * self.k ** 2))
        b = self.space.view(theta, self.b_off, (self.cout,))
        cols = self._cols(x)
        y = cols @ Wm.T + b
        return y.reshape(B, H, W, self.cout).transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, theta, grad, dy, cache, need_input_grad=True):
        cols, (B, C, H, W) = cache
        k, p = self.k, self.k // 2
        dyr = dy.transpose(0, 2, 3, 1).reshape(B * H * W, self.cout)
        Wm = self.space.view(theta, self.w_off, (self.cout, C * k * k))
        self.space.view(grad, self.w_off, Wm.shape)[...] += dyr.T @ cols
        self.space.view(grad, self.b_off, (self.cout,))[...] += dyr.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = dyr @ Wm
        if k == 1:
            return dcols.reshape(B, H, W, C).transpose(0, 3, 1, 2)
        dcols = dcols.reshape(B, H, W, C, k, k)
        dxp = np.zeros((B, C, H + 2 * p, W + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + H, p:p + W]


class Dense:
    def __init__(self, space: ParamSpace, name: str, din: int, dout: int):
        self.din, self.dout = din, dout
        self.space = space
        self.w_off = space.add(f"{name}.weight", (dout, din), fan_in=din)
        self.b_off = space.add(f"{name}.bias", (dout,), init="zeros")

    def forward(self, theta, x):
        Wm = self.space.view(theta, self.w_off, (self.dout, self.din))
        b = self.space.view(theta, self.b_off, (self.dout,))
        return x @ Wm.T + b, x

    def backward(self, theta, grad, dy, x):
        Wm = self.space.view(theta, self.w_off, (self.dout, self.din))
        self.space.view(grad, self.w_off, Wm.shape)[...] += dy.T @ x
        self.space.view(grad, self.b_off, (self.dout,))[...] += dy.sum(axis=0)
        return dy @ Wm


def space_to_depth(x, k):
    B, C, H, W = x.shape
    x = x.reshape(B, C, H // k, k, W // k, k)
    return x.transpose(0, 1, 3, 5, 2, 4).reshape(B, C * k * k, H // k, W // k)


def depth_to_space(x, k):
    B, Ck, h, w = x.shape
    C = Ck // (k * k)
    x = x.reshape(B, C, k, k, h, w)
    return x.transpose(0, 1, 4, 2, 5, 3).reshape(B, C, h * k, w * k)


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Sin/cos features of integer timesteps, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.step_count = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.step_count)
        vhat = self.v / (1 - self.beta2 ** self.step_count)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return theta


class SGD:
    def __init__(self, lr=1e-4):
        self.lr = lr

    def step(self, theta, grad):
        theta -= self.lr * grad
        return theta


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
