"""Scikit-learn facades over the reconstruction GAN and the detector.

The heavy lifting lives in :mod:`ganshield.gan` and :mod:`ganshield.defense`;
these classes adapt it to the fit/transform/predict idiom so the model slots
into pipelines, grid search, and clone-based experiment loops.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .attacks import build_training_masks, expand_mask
from .defense import calibrate_thresholds, identify
from .gan import (
    GanHyper,
    corrupted_examples_for_window,
    discriminate,
    fit_normalization,
    generate,
    train_gan,
)


def _validate_windows(X, n_x=None, w=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n_samples, n_x, w), got {X.shape}")
    if n_x is not None and X.shape[1] != n_x:
        raise ValueError(f"windows carry {X.shape[1]} states, model expects {n_x}")
    if w is not None and X.shape[2] != w:
        raise ValueError(f"windows span {X.shape[2]} samples, model expects {w}")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows must be finite")
    return X


class GanReconstructor(BaseEstimator, TransformerMixin):
    """Masked window reconstructor trained adversarially.

    ``fit`` consumes clean measurement windows in physical units, shape
    (n_samples, n_x, w), manufactures the corrupted variants for every
    training mask internally, and trains the generator/discriminator pair.
    ``transform`` maps raw windows to their reconstructions (same units and
    shape) and ``score_samples`` returns the discriminator's plausibility
    score per window.

    Parameters mirror the training hyperparameters; ``block_sizes`` gives the
    per-sender state partition used to build the corruption masks and
    ``n_scenarios`` the total mask count, the trivial all-healthy mask
    included.
    """

    def __init__(
        self,
        block_sizes=(2, 2, 2, 2),
        n_scenarios=9,
        bias_fraction=0.20,
        w=5,
        lam=0.01,
        epochs=120,
        batch_size=32,
        hidden_g=64,
        hidden_d=64,
        lr_g=1e-3,
        lr_d=1e-3,
        d_steps=1,
        non_saturating=False,
        seed=0,
    ):
        self.block_sizes = block_sizes
        self.n_scenarios = n_scenarios
        self.bias_fraction = bias_fraction
        self.w = w
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.hidden_g = hidden_g
        self.hidden_d = hidden_d
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.d_steps = d_steps
        self.non_saturating = non_saturating
        self.seed = seed

    def _hyper(self) -> GanHyper:
        return GanHyper(
            w=self.w,
            lam=self.lam,
            epochs=self.epochs,
            batch_size=self.batch_size,
            hidden_g=self.hidden_g,
            hidden_d=self.hidden_d,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            d_steps=self.d_steps,
            non_saturating=self.non_saturating,
        )

    def fit(self, X, y=None):
        X = _validate_windows(X, w=self.w)
        block_sizes = list(self.block_sizes)
        if sum(block_sizes) != X.shape[1]:
            raise ValueError(
                f"block_sizes sum to {sum(block_sizes)} but windows carry {X.shape[1]} states"
            )
        n_gen = len(block_sizes)
        norm = fit_normalization(X)
        gen_masks = build_training_masks(n_gen, self.n_scenarios, seed=self.seed)
        expanded = [expand_mask(gm, block_sizes, self.w) for gm in gen_masks]
        # equilibrium estimated from the data; peak deviations set the FDI bias scale
        center = X.mean(axis=(0, 2))
        peaks = np.abs(X - center[None, :, None]).max(axis=(0, 2))
        rng = np.random.default_rng(self.seed)
        examples = []
        for window in X:
            examples.extend(
                corrupted_examples_for_window(
                    window, norm, gen_masks, expanded, peaks, self.bias_fraction, rng
                )
            )
        self.model_ = train_gan(
            examples, self._hyper(), seed=self.seed, n_x=X.shape[1], normalization=norm
        )
        self.n_x_ = X.shape[1]
        self.gen_masks_ = gen_masks
        self.peaks_ = peaks
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _validate_windows(X, n_x=self.n_x_, w=self.w)
        out = generate(self.model_, self.model_.normalization.normalize(X))
        return self.model_.normalization.denormalize(out)

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _validate_windows(X, n_x=self.n_x_, w=self.w)
        scores = discriminate(self.model_, self.model_.normalization.normalize(X))
        return np.atleast_1d(scores)


class SenderAttackDetector(BaseEstimator):
    """Per-sender attack flags from a fitted reconstructor.

    ``fit`` calibrates per-sender loss thresholds on healthy windows;
    ``predict`` returns a binary matrix (n_samples, n_senders) with 1 where a
    sender's block reconstruction loss exceeds its threshold. The wrapped
    ``estimator`` must be a fitted GanReconstructor (or expose ``model_`` and
    ``block_sizes`` compatibly).
    """

    def __init__(self, estimator=None, n_sigma=3.0):
        self.estimator = estimator
        self.n_sigma = n_sigma

    def fit(self, X, y=None):
        if self.estimator is None:
            raise ValueError("an underlying reconstructor is required")
        check_is_fitted(self.estimator, "model_")
        X = _validate_windows(X, n_x=self.estimator.n_x_, w=self.estimator.w)
        block_sizes = list(self.estimator.block_sizes)
        self.thresholds_ = calibrate_thresholds(
            self.estimator.model_, X, block_sizes, n_sigma=self.n_sigma
        )
        self.block_sizes_ = block_sizes
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "thresholds_")
        X = _validate_windows(X, n_x=self.estimator.n_x_, w=self.estimator.w)
        model = self.estimator.model_
        flags = np.zeros((X.shape[0], len(self.block_sizes_)), dtype=np.int64)
        for k, window in enumerate(X):
            attacked, _, _ = identify(
                model,
                model.normalization.normalize(window),
                self.thresholds_,
                self.block_sizes_,
            )
            flags[k, list(attacked)] = 1
        return flags

    def score_samples(self, X) -> np.ndarray:
        """Discriminator plausibility per window, higher is healthier."""
        check_is_fitted(self, "thresholds_")
        return self.estimator.score_samples(X)
