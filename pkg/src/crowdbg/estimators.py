"""scikit-learn style wrappers around the core primitives.

These adapters expose the generators and the toy counter through the
familiar fit/transform/predict surface so they compose with sklearn
tooling (clone, pipelines, grid search over the suppression knobs).
The underlying functions remain the source of truth; nothing here adds
behavior beyond parameter bookkeeping.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .annotations import (
    AnnotatedImage,
    build_foreground_mask,
    gaussian_density_map,
    head_sizes_from_hints,
)
from .errors import ParameterError
from .grids import BinaryMask, DensityMap
from .losses import DensityLossKind
from .toymodel.model import TrainConfig, init_params, predict_density, train


class GaussianDensityMapper(BaseEstimator, TransformerMixin):
    """Annotated images -> ground-truth density maps.

    Stateless; fit only validates the bandwidth.
    """

    def __init__(self, sigma: float = 15.0):
        self.sigma = sigma

    def fit(self, X: Sequence[AnnotatedImage], y=None):
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        self.n_images_seen_ = len(X)
        return self

    def transform(self, X: Sequence[AnnotatedImage]) -> list[DensityMap]:
        return [gaussian_density_map(img, sigma=self.sigma) for img in X]


class ForegroundMasker(BaseEstimator, TransformerMixin):
    """Annotated images -> binary head-disk masks at a given dilation.

    Head sizes come from the per-point size hints (with the usual lower
    bound); pass detections through estimate_head_sizes yourself if you
    need detector-derived sizes.
    """

    def __init__(self, alpha: float = 2.0):
        self.alpha = alpha

    def fit(self, X: Sequence[AnnotatedImage], y=None):
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        self.n_images_seen_ = len(X)
        return self

    def transform(self, X: Sequence[AnnotatedImage]) -> list[BinaryMask]:
        return [
            build_foreground_mask(img, head_sizes_from_hints(img), self.alpha) for img in X
        ]


def _loss_kind(value) -> DensityLossKind:
    if isinstance(value, DensityLossKind):
        return value
    return DensityLossKind(value)


class ToyCounter(BaseEstimator):
    """Trainable density counter with optional background suppression.

    fit(X) expects scene-like objects exposing .image, .gt_density, and
    .gt_mask(alpha) (SyntheticScene qualifies); predict(X) accepts the
    same objects or plain 2-D grids and returns one DensityMap each.
    """

    def __init__(
        self,
        with_bs: bool = True,
        lambda_: float = 1e-4,
        learning_rate: float = 1e-4,
        epochs: int = 30,
        seed: int = 0,
        alpha_train: float = 1.0,
        density_loss_kind: str = "absolute",
    ):
        self.with_bs = with_bs
        self.lambda_ = lambda_
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.alpha_train = alpha_train
        self.density_loss_kind = density_loss_kind

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            with_bs=self.with_bs,
            lambda_=self.lambda_,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.seed,
            alpha_train=self.alpha_train,
            density_loss_kind=_loss_kind(self.density_loss_kind),
        )

    def fit(self, X: Sequence, y=None):
        cfg = self._train_config()
        self.params_, self.trace_ = train(init_params(self.seed), list(X), cfg)
        return self

    def predict(self, X: Sequence) -> list[DensityMap]:
        if not hasattr(self, "params_"):
            raise NotFittedError("ToyCounter must be fitted before predict")
        grids = [x.image if hasattr(x, "image") else np.asarray(x) for x in X]
        return [predict_density(self.params_, g, with_bs=self.with_bs) for g in grids]

    def predict_counts(self, X: Sequence) -> list[float]:
        """Total predicted count per input."""
        return [d.total() for d in self.predict(X)]
