"""Image <-> binary latent codecs.

Two codecs share the ``encode`` / ``binarize`` / ``decode`` surface and the
scikit-learn transformer protocol (``transform`` encodes to probabilities,
``inverse_transform`` decodes bits back to images):

* :class:`BitplaneCodec` average-pools by ``factor``, quantizes to ``2**bits``
  levels and stores each level as Gray-code bit channels.  No training.
* :class:`BinaryAutoencoder` is a small convolutional encoder/decoder trained
  with MSE through Bernoulli sampling (straight-through gradients).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from .diffusion import bernoulli_sample
from .nn import make_optimizer
from .rng import as_stream
from .validation import ShapeError, check_bits, check_images, check_probabilities


@dataclass(frozen=True)
class CodecSpec:
    kind: str = "bitplane"
    latent_channels: int = 4
    factor: int = 4
    bits: int = 4

    def __post_init__(self):
        if self.kind not in ("bitplane", "learned"):
            raise ValueError(f"unknown codec kind {self.kind!r}")
        if self.latent_channels < 1 or self.factor < 1 or self.bits < 1:
            raise ValueError("latent_channels, factor and bits must be >= 1")


def gray_encode(n):
    n = np.asarray(n, dtype=np.int64)
    return n ^ (n >> 1)


def gray_decode(g):
    g = np.asarray(g, dtype=np.int64).copy()
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


def binarize(y, mode: str = "sample", rng=None) -> np.ndarray:
    """Turn encoder probabilities into bits; threshold ties at 0.5 go to 1."""
    y = check_probabilities(y, "y")
    if mode == "threshold":
        return (y >= 0.5).astype(np.uint8)
    if mode == "sample":
        return bernoulli_sample(y, rng)
    raise ValueError(f"unknown binarize mode {mode!r}")


def _check_divisible(X, factor):
    h, w = X.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"image size {h}x{w} not divisible by factor {factor}")


class BitplaneCodec(TransformerMixin, BaseEstimator):
    """Deterministic Gray-code bit-plane codec.

    Parameters
    ----------
    bits : int
        Bits per image channel; the latent has ``c * bits`` channels with the
        most significant Gray bit first.
    factor : int
        Spatial downsampling factor ``k``.
    """

    def __init__(self, bits: int = 4, factor: int = 4):
        self.bits = bits
        self.factor = factor

    def fit(self, X, y=None):
        X = check_images(X)
        _check_divisible(X, self.factor)
        self.n_channels_ = X.shape[1]
        self.image_shape_ = X.shape[1:]
        return self

    @property
    def latent_channels(self):
        check_is_fitted(self)
        return self.n_channels_ * self.bits

    def encode(self, X) -> np.ndarray:
        single = np.ndim(X) == 3
        X = check_images(X[None] if single else X)
        if not hasattr(self, "n_channels_"):
            self.fit(X)
        _check_divisible(X, self.factor)
        if X.shape[1] != self.n_channels_:
            raise ShapeError(f"expected {self.n_channels_} image channels, got {X.shape[1]}")
        n, c, h, w = X.shape
        k = self.factor
        pooled = X.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
        levels = np.clip(np.floor(pooled * 2 ** self.bits), 0, 2 ** self.bits - 1).astype(np.int64)
        g = gray_encode(levels)
        shifts = np.arange(self.bits - 1, -1, -1)
        planes = (g[:, :, None] >> shifts[None, None, :, None, None]) & 1
        Z = planes.reshape(n, c * self.bits, h // k, w // k).astype(np.float64)
        return Z[0] if single else Z

    def decode(self, Z) -> np.ndarray:
        single = np.ndim(Z) == 3
        Z = check_bits(Z[None] if single else Z, "Z").astype(np.int64)
        n, C, h, w = Z.shape
        c = getattr(self, "n_channels_", C // self.bits)
        if C != c * self.bits:
            raise ShapeError(f"expected {c * self.bits} latent channels, got {C}")
        planes = Z.reshape(n, c, self.bits, h, w)
        weights = 1 << np.arange(self.bits - 1, -1, -1)
        g = np.tensordot(planes, weights, axes=([2], [0]))
        levels = gray_decode(g)
        img = (levels + 0.5) / 2 ** self.bits
        k = self.factor
        img = img.repeat(k, axis=2).repeat(k, axis=3)
        return img[0] if single else img

    def transform(self, X):
        return self.encode(X)

    def inverse_transform(self, Z):
        return self.decode(Z)

    def to_state(self) -> dict:
        check_is_fitted(self)
        return {"kind": "bitplane", "bits": self.bits, "factor": self.factor,
                "image_shape": list(self.image_shape_)}


class BinaryAutoencoder(TransformerMixin, BaseEstimator):
    """Convolutional binarizing autoencoder trained with MSE.

    The encoder is ``conv3x3 -> silu -> space-to-depth(k) -> conv1x1 -> sigmoid``;
    the decoder mirrors it with ``conv1x1 -> depth-to-space(k) -> silu ->
    conv3x3 -> silu -> conv3x3 -> sigmoid``.  During training the latent is
    sampled from the encoder probabilities and gradients pass straight through.
    """

    def __init__(self, latent_channels: int = 8, factor: int = 4, width: int = 8,
                 learning_rate: float = 1e-3, batch_size: int = 8, iterations: int = 1000,
                 optimizer: str = "adam", seed: int = 0, zero_encoder_output: bool = False):
        self.latent_channels = latent_channels
        self.factor = factor
        self.width = width
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.optimizer = optimizer
        self.seed = seed
        self.zero_encoder_output = zero_encoder_output

    def _build(self, n_channels):
        k, F, C = self.factor, self.width, self.latent_channels
        space = nn.ParamSpace()
        self._enc_in = nn.Conv2d(space, "enc_in", n_channels, F, 3)
        self._enc_out = nn.Conv2d(space, "enc_out", F * k * k, C, 1)
        self._dec_in = nn.Conv2d(space, "dec_in", C, F * k * k, 1)
        self._dec_mid = nn.Conv2d(space, "dec_mid", F, F, 3)
        self._dec_out = nn.Conv2d(space, "dec_out", F, n_channels, 3)
        self._space = space

    def initialize(self, n_channels: int, image_shape=None):
        """Allocate fresh parameters without training."""
        self._build(n_channels)
        zero = ("enc_out",) if self.zero_encoder_output else ()
        self.params_ = self._space.init(as_stream(self.seed).child("ae-init"), zero=zero)
        self.n_channels_ = n_channels
        self.image_shape_ = tuple(image_shape) if image_shape is not None else None
        return self

    # forward/backward pieces -------------------------------------------------
    def _encode_logits(self, theta, X):
        h, c1 = self._enc_in.forward(theta, X)
        a, s = nn.silu(h)
        d = nn.space_to_depth(a, self.factor)
        logits, c2 = self._enc_out.forward(theta, d)
        return logits, (h, s, c1, c2)

    def _decode(self, theta, Z):
        u, c1 = self._dec_in.forward(theta, Z)
        v = nn.depth_to_space(u, self.factor)
        a1, s1 = nn.silu(v)
        m, c2 = self._dec_mid.forward(theta, a1)
        a2, s2 = nn.silu(m)
        out_logits, c3 = self._dec_out.forward(theta, a2)
        return expit(out_logits), (c1, v, s1, c2, m, s2, c3)

    def _loss_and_grad(self, theta, X, rng):
        logits, ec = self._encode_logits(theta, X)
        y = expit(logits)
        Z = bernoulli_sample(y, rng).astype(np.float64)
        xhat, dc = self._decode(theta, Z)
        diff = xhat - X
        loss = float(np.mean(diff ** 2))
        grad = np.zeros_like(theta)
        c1, v, s1, c2, m, s2, c3 = dc
        dlog = 2.0 * diff / diff.size * xhat * (1.0 - xhat)
        da2 = self._dec_out.backward(theta, grad, dlog, c3)
        dm = nn.silu_backward(da2, m, s2)
        da1 = self._dec_mid.backward(theta, grad, dm, c2)
        dv = nn.silu_backward(da1, v, s1)
        dZ = self._dec_in.backward(theta, grad, nn.space_to_depth(dv, self.factor), c1)
        # straight-through: dL/dy = dL/dz
        dlogits = dZ * y * (1.0 - y)
        h, s, ec1, ec2 = ec
        dd = self._enc_out.backward(theta, grad, dlogits, ec2)
        dh = nn.silu_backward(nn.depth_to_space(dd, self.factor), h, s)
        self._enc_in.backward(theta, grad, dh, ec1, need_input_grad=False)
        return loss, grad

    def fit(self, X, y=None):
        X = check_images(X)
        _check_divisible(X, self.factor)
        self.initialize(X.shape[1], X.shape[1:])
        rng = as_stream(self.seed).child("train-ae")
        opt = make_optimizer(self.optimizer, self.learning_rate)
        history = np.empty(self.iterations)
        for it in range(self.iterations):
            idx = rng.integers(0, len(X), size=self.batch_size)
            loss, grad = self._loss_and_grad(self.params_, X[idx], rng)
            opt.step(self.params_, grad)
            history[it] = loss
        self.loss_history_ = history
        return self

    def reconstruction_mse(self, X, rng=0) -> float:
        """Mean squared error of decode(sample(encode(X)))."""
        X = check_images(X)
        Z = binarize(self.encode(X), "sample", as_stream(rng).child("mse"))
        return float(np.mean((self.decode(Z) - X) ** 2))

    def encode(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        single = np.ndim(X) == 3
        X = check_images(X[None] if single else X)
        _check_divisible(X, self.factor)
        if X.shape[1] != self.n_channels_:
            raise ShapeError(f"expected {self.n_channels_} image channels, got {X.shape[1]}")
        logits, _ = self._encode_logits(self.params_, X)
        y = expit(logits)
        return y[0] if single else y

    def decode(self, Z) -> np.ndarray:
        check_is_fitted(self, "params_")
        single = np.ndim(Z) == 3
        Z = check_bits(Z[None] if single else Z, "Z").astype(np.float64)
        if Z.shape[1] != self.latent_channels:
            raise ShapeError(f"expected {self.latent_channels} latent channels, got {Z.shape[1]}")
        xhat, _ = self._decode(self.params_, Z)
        return xhat[0] if single else xhat

    def transform(self, X):
        return self.encode(X)

    def inverse_transform(self, Z):
        return self.decode(Z)

    def to_state(self) -> dict:
        check_is_fitted(self, "params_")
        state = {"kind": "learned", "params": self.params_.copy(), "n_channels": self.n_channels_,
                 "image_shape": ",".join(str(v) for v in self.image_shape_ or ())}
        state.update(self.get_params())
        return state


def make_codec(spec: CodecSpec, **kwargs):
    if spec.kind == "bitplane":
        return BitplaneCodec(bits=spec.bits, factor=spec.factor)
    return BinaryAutoencoder(latent_channels=spec.latent_channels, factor=spec.factor, **kwargs)


def encode(codec, x):
    return codec.encode(x)


def decode(codec, z):
    return codec.decode(z)


def train_autoencoder(dataset, spec: CodecSpec, config):
    """Train a learned codec from a :class:`~bernoulli_ad.training.TrainConfig`.

    Returns ``(codec, loss_history)``.
    """
    if spec.kind != "learned":
        raise ValueError("train_autoencoder needs a learned codec spec")
    X = np.asarray(dataset, dtype=np.float64)
    if X.size == 0 or len(X) == 0:
        raise ValueError("dataset is empty")
    ae = BinaryAutoencoder(latent_channels=spec.latent_channels, factor=spec.factor,
                           learning_rate=config.learning_rate, batch_size=config.batch_size,
                           iterations=config.iterations, optimizer=config.optimizer,
                           seed=config.seed)
    ae.fit(X)
    return ae, ae.loss_history_
