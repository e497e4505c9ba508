"""scikit-learn style wrapper around training and full-image inference."""
import os
import tempfile

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import data, imgcore, metrics, trainer
from .checkpoint import load_checkpoint
from .errors import ShapeMismatch
from .losses import LossConfig
from .model import ArchConfig


def check_images(X, name="X"):
    """Validate a stack ``(n, H, W, 3)`` or a list of ``(H, W, 3)`` images.

    Returns a list of float64 arrays.
    """
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = list(X)
    if isinstance(X, np.ndarray) and X.ndim == 3:
        raise ShapeMismatch(f"{name}: got a single image; wrap it in a list")
    images = [imgcore.check_image(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if not images:
        raise ValueError(f"{name} is empty")
    return images


def check_image_pairs(X, y):
    lows = check_images(X, "X")
    highs = check_images(y, "y")
    if len(lows) != len(highs):
        raise ShapeMismatch(f"X has {len(lows)} images but y has {len(highs)}")
    for i, (lo, hi) in enumerate(zip(lows, highs)):
        if lo.shape != hi.shape:
            raise ShapeMismatch(f"pair {i}: {lo.shape} vs {hi.shape}")
    return lows, highs


def _stack_if_uniform(images):
    if len({im.shape for im in images}) == 1:
        return np.stack(images)
    return images


class NEIDEnhancer(TransformerMixin, BaseEstimator):
    """Low-light enhancer with the usual ``fit`` / ``transform`` / ``score`` API.

    ``fit(X, y)`` trains on low-light images ``X`` paired with normal-light
    images ``y``; ``transform(X)`` returns enhanced images with the same
    geometry as the inputs; ``score`` is the mean PSNR in dB.
    """

    def __init__(self, variant="full", levels=4, base_channels=32, epochs=2000, batch_size=8,
                 steps_per_epoch=None, patch_size=256, lr_values=(1e-4, 1e-5, 1e-6),
                 lr_boundaries=(500, 1000), delta=1.0, lambda_mse=0.1, lambda_color=0.1,
                 seed=0, downsample=True, work_dir=None):
        self.variant = variant
        self.levels = levels
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.patch_size = patch_size
        self.lr_values = lr_values
        self.lr_boundaries = lr_boundaries
        self.delta = delta
        self.lambda_mse = lambda_mse
        self.lambda_color = lambda_color
        self.seed = seed
        self.downsample = downsample
        self.work_dir = work_dir

    def _train_config(self):
        return trainer.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_values=tuple(self.lr_values),
            lr_boundaries=tuple(self.lr_boundaries),
            seed=self.seed,
            arch=ArchConfig(levels=self.levels, base_channels=self.base_channels, variant=self.variant),
            loss=LossConfig(delta=self.delta, lambda_mse=self.lambda_mse, lambda_color=self.lambda_color),
            steps_per_epoch=self.steps_per_epoch,
            patch_size=self.patch_size,
        )

    def fit(self, X, y):
        lows, highs = check_image_pairs(X, y)
        cfg = self._train_config()
        samples = [data.ArrayPair(f"{i:05d}", lo, hi) for i, (lo, hi) in enumerate(zip(lows, highs))]
        out_dir = self.work_dir or tempfile.mkdtemp(prefix="neid-")
        ckpt = trainer.train(cfg, samples, out_dir)
        self.checkpoint_ = ckpt
        self.model_ = trainer.model_from_checkpoint(ckpt)
        self.run_dir_ = out_dir
        self.n_train_pairs_ = len(samples)
        return self

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = load_checkpoint(path)
        arch = ckpt.arch
        est = cls(variant=arch.variant, levels=arch.levels, base_channels=arch.base_channels)
        est.checkpoint_ = ckpt
        est.model_ = trainer.model_from_checkpoint(ckpt)
        est.run_dir_ = os.path.dirname(os.fspath(path))
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def transform(self, X):
        self._check_fitted()
        images = check_images(X)
        out = [trainer.enhance_image(self.model_, im, downsample=self.downsample) for im in images]
        return _stack_if_uniform(out)

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean PSNR (dB) of the enhanced ``X`` against ``y``."""
        lows, highs = check_image_pairs(X, y)
        preds = self.transform(lows)
        return float(np.mean([metrics.psnr(p, h) for p, h in zip(preds, highs)]))
