"""scikit-learn style wrappers around the multimodal model and the wavelet denoiser."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import MESample, PreparedSample, prepare_dataset, validate_sample
from .model import FullModelConfig, init_train_state, predict_logits, probabilities, train
from .wavelet import WaveletSpec, denoise


def check_samples(X, num_classes: int | None = None, *, need_labels: bool = False) -> list:
    """Validate a sequence of raw or prepared samples and return it as a list.

    Raw :class:`MESample` objects are checked against their invariants;
    mixing raw and prepared samples is rejected.
    """
    if isinstance(X, (MESample, PreparedSample)) or not isinstance(X, Sequence):
        raise TypeError(f"expected a sequence of samples, got {type(X).__name__}")
    samples = list(X)
    if not samples:
        raise ValueError("no samples given")
    kinds = {type(s) for s in samples}
    if len(kinds) > 1 or not kinds <= {MESample, PreparedSample}:
        raise TypeError(f"samples must all be MESample or all PreparedSample, got {sorted(k.__name__ for k in kinds)}")
    for s in samples:
        if isinstance(s, MESample):
            validate_sample(s, num_classes)
        elif need_labels and num_classes is not None and not 0 <= s.label < num_classes:
            raise ValueError(f"{s.sample_id}: label {s.label} outside [0, {num_classes})")
    return samples


class MultimodalEmotionClassifier(ClassifierMixin, BaseEstimator):
    """Colour/depth/physiological emotion classifier.

    ``X`` is a sequence of :class:`MESample` (prepared on the fly) or
    :class:`PreparedSample`.  ``y`` defaults to the labels stored on the
    samples.  ``classes_`` is always ``0..num_classes-1`` so probability
    columns line up across folds even when a class is missing from a
    training split.
    """

    def __init__(self, config: FullModelConfig | None = None):
        self.config = config

    def _config(self) -> FullModelConfig:
        cfg = self.config if self.config is not None else FullModelConfig()
        cfg.validate()
        return cfg

    def _prepare(self, X, cfg, need_labels=False) -> list[PreparedSample]:
        samples = check_samples(X, cfg.num_classes, need_labels=need_labels)
        if isinstance(samples[0], MESample):
            samples = prepare_dataset(samples, cfg)
        return samples

    def fit(self, X, y=None):
        cfg = self._config()
        samples = self._prepare(X, cfg, need_labels=y is None)
        if y is not None:
            y = np.asarray(y)
            if y.shape != (len(samples),):
                raise ValueError(f"y has shape {y.shape}, expected ({len(samples)},)")
            if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= cfg.num_classes:
                raise ValueError(f"labels must be integers in [0, {cfg.num_classes})")
        state = init_train_state(cfg)
        train(state, samples, cfg, labels=y)
        self.params_ = state.params
        self.loss_log_ = list(state.loss_log)
        self.classes_ = np.arange(cfg.num_classes)
        self.n_epochs_ = state.epoch
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        cfg = self._config()
        return predict_logits(self.params_, self._prepare(X, cfg), cfg)

    def predict_proba(self, X) -> np.ndarray:
        return probabilities(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        # argmax returns the first maximum, so ties go to the lowest class index
        return self.classes_[proba.argmax(axis=1)]


class WaveletDenoiser(TransformerMixin, BaseEstimator):
    """Row-wise Daubechies soft-threshold denoising of ``[n_signals, n_samples]`` arrays.

    Stateless: ``fit`` only validates the input and records its width.
    """

    def __init__(self, wavelet: str = "db4", levels: int = 4):
        self.wavelet = wavelet
        self.levels = levels

    def _spec(self) -> WaveletSpec:
        return WaveletSpec.from_name(self.wavelet, self.levels)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self._spec()
        if X.shape[1] < 2**self.levels:
            raise ValueError(f"signals of length {X.shape[1]} are too short for {self.levels} levels")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} samples per signal, fitted on {self.n_features_in_}")
        return denoise(X, self._spec())
