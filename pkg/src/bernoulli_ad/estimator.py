"""scikit-learn style wrapper around the full detection pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .anomaly import InferenceConfig, detect
from .codec import BitplaneCodec, binarize
from .denoiser import Architecture, ConvDenoiser
from .rng import RngStream
from .schedule import build_schedule
from .training import TrainConfig, train_diffusion
from .validation import check_images


class MaskedBernoulliDetector(BaseEstimator):
    """Fit on healthy images; reconstruct, map and segment anomalies in new ones.

    ``fit`` fits the codec (a :class:`BitplaneCodec` unless another codec
    estimator is given), binarizes the healthy codes and trains a
    :class:`ConvDenoiser` on them.  ``predict`` returns binary segmentations,
    ``transform`` returns anomaly maps and ``anomaly_score`` returns the
    percentage of masked latent entries per image.
    """

    def __init__(self, codec=None, schedule_kind="linear", T=1000, beta_start=1e-4,
                 beta_end=0.02, width=16, n_blocks=2, kernel=3, emb_dim=32, recenter=True,
                 learning_rate=1e-4, batch_size=32, iterations=1000, optimizer="adam",
                 L=200, P=0.5, binarize_mode="sample", median_kernel=5, threshold=0.5,
                 min_component=10, normalize_map=False, random_state=0):
        self.codec = codec
        self.schedule_kind = schedule_kind
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.width = width
        self.n_blocks = n_blocks
        self.kernel = kernel
        self.emb_dim = emb_dim
        self.recenter = recenter
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.optimizer = optimizer
        self.L = L
        self.P = P
        self.binarize_mode = binarize_mode
        self.median_kernel = median_kernel
        self.threshold = threshold
        self.min_component = min_component
        self.normalize_map = normalize_map
        self.random_state = random_state

    def _inference_config(self):
        return InferenceConfig(L=self.L, P=self.P, binarize_mode=self.binarize_mode,
                               seed=self.random_state, median_kernel=self.median_kernel,
                               threshold=self.threshold, min_component=self.min_component,
                               normalize_map=self.normalize_map)

    def fit(self, X, y=None):
        X = check_images(X)
        codec = BitplaneCodec() if self.codec is None else clone(self.codec)
        self.codec_ = codec.fit(X)
        self.schedule_ = build_schedule(self.schedule_kind, self.T, self.beta_start, self.beta_end)
        self._inference_config().validate(self.schedule_)
        rng = RngStream(self.random_state).child("encode-train")
        Z = binarize(self.codec_.encode(X), self.binarize_mode, rng)
        arch = Architecture(channels=Z.shape[1], width=self.width, n_blocks=self.n_blocks,
                            kernel=self.kernel, emb_dim=self.emb_dim, recenter=self.recenter)
        self.denoiser_ = ConvDenoiser(arch, seed=self.random_state)
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          iterations=self.iterations, optimizer=self.optimizer,
                          seed=self.random_state)
        _, self.loss_history_ = train_diffusion(Z, self.denoiser_, self.schedule_, cfg)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.image_shape_ = X.shape[1:]
        return self

    @classmethod
    def from_components(cls, codec, denoiser, schedule, **params):
        """Wrap already-trained parts without calling ``fit``."""
        est = cls(codec=codec, T=schedule.T, schedule_kind=schedule.kind, **params)
        est.codec_ = codec
        est.denoiser_ = denoiser
        est.schedule_ = schedule
        return est

    def detect(self, X, masked=True):
        """Full per-image results (see :class:`~bernoulli_ad.anomaly.AnomalyResult`)."""
        check_is_fitted(self, "denoiser_")
        return detect(check_images(X), self.codec_, self.denoiser_, self.schedule_,
                      self._inference_config(), masked=masked)

    def reconstruct(self, X):
        return np.stack([r.reconstruction for r in self.detect(X)])

    def transform(self, X):
        return np.stack([r.anomaly_map for r in self.detect(X)])

    def predict(self, X):
        return np.stack([r.segmentation for r in self.detect(X)])

    def anomaly_score(self, X):
        return np.array([r.mask_fraction for r in self.detect(X)])
