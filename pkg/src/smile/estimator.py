"""Scikit-learn style wrappers around :func:`smile.training.train`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import SmileModel
from .property import InputBox, from_spec
from .training import TrainConfig, train


class _SmileBase(BaseEstimator):
    _loss = "mse"

    def __init__(self, property=None, box=None, latent=8, hidden=(32, 32), aux_hidden=None,
                 training=None, random_state=0):
        self.property = property
        self.box = box
        self.latent = latent
        self.hidden = hidden
        self.aux_hidden = aux_hidden
        self.training = training
        self.random_state = random_state

    def _resolve_box(self, X) -> InputBox:
        if self.box is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
            return InputBox(lo, np.where(hi > lo, hi, lo + 1.0))
        if isinstance(self.box, InputBox):
            return self.box
        return InputBox.from_dict(self.box)

    def _fit(self, X, y):
        if self.property is None:
            raise ValueError("property is required, e.g. {'kind': 'robustness', ...}")
        box = self._resolve_box(X)
        prop = from_spec(dict(self.property), box)
        opts = {"loss": self._loss, **(self.training or {}), "seed": self.random_state}
        cfg = TrainConfig.from_dict(opts)
        model = SmileModel.init(X.shape[1], self.latent, tuple(self.hidden), self.aux_hidden,
                                seed=self.random_state)
        self.report_ = train(model, X, y, prop, box, cfg)
        self.model_ = model
        self.box_ = box
        self.viol_bound_ = self.report_.viol_bound
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict(X)

    @property
    def certified_(self) -> bool:
        check_is_fitted(self, "model_")
        return self.viol_bound_ == 0.0


class SmileRegressor(RegressorMixin, _SmileBase):
    """Regressor trained to satisfy a relational property over ``box``.

    ``property`` is a property description as accepted by
    :func:`smile.property.from_spec`; ``box`` defaults to the bounding box of
    the training data. After ``fit``, ``viol_bound_ == 0`` means the property
    is certified for the deployed model.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        return self._fit(X, y)

    def predict(self, X):
        return self._logits(X)


class SmileClassifier(ClassifierMixin, _SmileBase):
    """Binary classifier on the logit; properties constrain the logit."""

    _loss = "bce"

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError("SmileClassifier supports exactly two classes")
        return self._fit(X, (y == self.classes_[1]).astype(np.float64))

    def decision_function(self, X):
        return self._logits(X)

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0.0).astype(int)]
