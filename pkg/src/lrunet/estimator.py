"""scikit-learn estimator facade over the training engine.

LruNetClassifier follows the fit/predict contract: hyperparameters are
constructor arguments mirrored as attributes, all heavy validation
happens in fit, and fitted state lives in trailing-underscore
attributes.  Inputs are rank-4 (samples, channels, height, width)
arrays; targets may be any label values, mapped through `classes_`.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .network import NetworkSpec
from .training import TrainConfig, normalize, train


class LruNetClassifier(BaseEstimator, ClassifierMixin):
    """Image classifier with layer-reuse blocks, trained by momentum SGD.

    The default configuration is deliberately small (one application per
    block, a short single-phase schedule) so the estimator is usable on
    desk-scale data; scale `reuse_count`, `width_multiplier` and `epochs`
    up for real runs.
    """

    def __init__(self, reuse_count=1, width_multiplier=0.25, dropout_rate=0.0,
                 epochs=5, learning_rate=0.05, batch_size=32, momentum=0.9,
                 weight_decay=5e-4, augment=False, random_state=0):
        self.reuse_count = reuse_count
        self.width_multiplier = width_multiplier
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augment = augment
        self.random_state = random_state

    def _check_images(self, X, expect_shape=None):
        X = check_array(X, allow_nd=True, dtype=np.float32)
        if X.ndim != 4:
            raise ValueError(
                f"X must be (samples, channels, height, width), got {X.ndim} dims"
            )
        if expect_shape is not None and X.shape[1:] != expect_shape:
            raise ValueError(
                f"X images have shape {X.shape[1:]}, the fitted network "
                f"expects {expect_shape}"
            )
        return X

    def fit(self, X, y):
        """Train a fresh network on images X and labels y."""
        X = self._check_images(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"y must be ({len(X)},), got shape {y.shape}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data must contain at least 2 classes")

        spec = NetworkSpec(
            reuse_count=self.reuse_count,
            width_multiplier=self.width_multiplier,
            num_classes=len(self.classes_),
            input_shape=X.shape[1:],
            dropout_rate=self.dropout_rate,
        )
        cfg = TrainConfig(
            batch_size=min(self.batch_size, len(X)),
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_schedule=((self.epochs, self.learning_rate),),
            seed=self.random_state,
            augment=self.augment,
        )
        self.net_, self.norm_stats_, self.history_ = train(spec, cfg, X, y_idx)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Softmax class probabilities, rows ordered as `classes_`."""
        check_is_fitted(self, "net_")
        X = self._check_images(X, self.net_.spec.input_shape)
        mean, std = self.norm_stats_
        out = []
        for start in range(0, len(X), 256):
            logits = self.net_.forward(normalize(X[start : start + 256], mean, std))
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
