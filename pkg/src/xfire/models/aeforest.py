from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array

from .autoencoder import AutoencoderTransformer
from .base import check_norm_stats
from .forest import GiniForest


class AeForestClassifier(ClassifierMixin, BaseEstimator):
    """Autoencoder features followed by a random forest.

    The autoencoder is trained without labels on every training window; the
    forest then learns from its bottleneck activations plus reconstruction
    error.  Passing an already fitted ``autoencoder`` skips that stage.
    """

    def __init__(self, autoencoder=None, forest=None, norm_stats=None):
        self.autoencoder = autoencoder
        self.forest = forest
        self.norm_stats = norm_stats

    def fit(self, X, y, X_val=None):
        X = check_array(X, dtype=np.float32)
        ae = self.autoencoder if self.autoencoder is not None else AutoencoderTransformer(norm_stats=self.norm_stats)
        if not hasattr(ae, "params_"):
            ae = clone(ae).fit(X, X_val=X_val)
        if ae.norm_stats is None:
            ae.norm_stats = self.norm_stats
        self.autoencoder_ = ae
        self.forest_ = clone(self.forest if self.forest is not None else GiniForest())
        self.forest_.fit(ae.transform(X), y)
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_norm_stats(self)
        return self.autoencoder_.transform(X)

    def predict_proba(self, X):
        return self.forest_.predict_proba(self.transform(X))

    def score_samples(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return self.forest_.predict(self.transform(X))
