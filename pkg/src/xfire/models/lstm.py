from __future__ import annotations

import numpy as np
from sklearn.base import ClassifierMixin

from ..nn import layers as L
from ..nn.optim import Parameter, glorot_uniform
from .base import NeuralEstimator, check_norm_stats


class LstmSequenceClassifier(ClassifierMixin, NeuralEstimator):
    """Stacked LSTM emitting attack/non-attack logits at every time step.

    ``fit`` takes ``X[n, T, n_features]`` and per-step labels ``y[n, T]``;
    the loss is the mean cross-entropy over all ``n * T`` steps.  The network
    is causal, so :meth:`step` can drive it one sample at a time.
    """

    def __init__(self, hidden_sizes=(64, 64), learning_rate=1e-3, batch_size=32, max_epochs=100,
                 patience=10, forget_bias=1.0, clip_norm=None, random_state=0, norm_stats=None):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.forget_bias = forget_bias
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.norm_stats = norm_stats

    def _init_params(self, rng):
        d, params = self.n_features_in_, []
        for i, H in enumerate(self.hidden_sizes):
            b = np.zeros(4 * H, self._dtype)
            b[H:2 * H] = self.forget_bias
            params.append(Parameter(f"lstm{i + 1}.W", glorot_uniform(rng, (d + H, 4 * H), d + H, 4 * H, self._dtype)))
            params.append(Parameter(f"lstm{i + 1}.b", b))
            d = H
        params.append(Parameter("fc.W", glorot_uniform(rng, (d, 2), d, 2, self._dtype)))
        params.append(Parameter("fc.b", np.zeros(2, self._dtype)))
        return params

    def _as_seq(self, X):
        X = np.asarray(X, dtype=self._dtype)
        if X.ndim != 3:
            raise ValueError(f"expected sequences [n, T, features], got shape {X.shape}")
        if hasattr(self, "n_features_in_") and X.shape[2] != self.n_features_in_:
            raise ValueError(f"model expects {self.n_features_in_} features per step, got {X.shape[2]}")
        return X

    def _forward(self, X):
        p = self._param_index()
        h, caches = X, []
        for i in range(len(self.hidden_sizes)):
            h, _, c = L.lstm_forward(h, p[f"lstm{i + 1}.W"].value, p[f"lstm{i + 1}.b"].value)
            caches.append(c)
        n, T, H = h.shape
        logits = L.dense_forward(h.reshape(n * T, H), p["fc.W"].value, p["fc.b"].value)
        return logits.reshape(n, T, 2), (h, caches)

    def _backward(self, dlogits, cache):
        p = self._param_index()
        h, caches = cache
        n, T, H = h.shape
        dh, dW, db = L.dense_backward(dlogits.reshape(n * T, 2), h.reshape(n * T, H), p["fc.W"].value)
        p["fc.W"].grad += dW
        p["fc.b"].grad += db
        dh = dh.reshape(n, T, H)
        for i in reversed(range(len(self.hidden_sizes))):
            W = p[f"lstm{i + 1}.W"]
            dh, dW, db = L.lstm_backward(dh, caches[i], W.value)
            W.grad += dW
            p[f"lstm{i + 1}.b"].grad += db
        return dh

    def _train_batch(self, X, y):
        logits, cache = self._forward(X)
        loss, dlogits = L.softmax_crossentropy(logits, y)
        self._backward(dlogits, cache)
        return loss

    def _eval_loss(self, X, y):
        return L.softmax_crossentropy(self._forward(X)[0], y)[0]

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X, dtype=self._dtype)
        self.n_features_in_ = X.shape[-1]
        X = self._as_seq(X)
        y = np.asarray(y).astype(np.int64)
        if y.shape != X.shape[:2]:
            raise ValueError(f"labels {y.shape} must match sequences {X.shape[:2]}")
        self.classes_ = np.array([0, 1])
        if X_val is not None:
            X_val, y_val = self._as_seq(X_val), np.asarray(y_val).astype(np.int64)
        return self._fit_loop(X, y, X_val, y_val)

    def decision_function(self, X):
        """Per-step logits ``[n, T, 2]``."""
        self._check_fitted()
        check_norm_stats(self)
        X = self._as_seq(X)
        return np.concatenate([self._forward(X[s:s + 256])[0] for s in range(0, len(X), 256)]) \
            if len(X) else np.empty((0, X.shape[1], 2), self._dtype)

    def predict_proba(self, X):
        return L.softmax(self.decision_function(X))

    def predict(self, X):
        return (self.predict_proba(X)[..., 1] >= 0.5).astype(np.int64)

    # streaming --------------------------------------------------------------
    def init_state(self, n: int = 1):
        self._check_fitted()
        return [(np.zeros((n, H), self._dtype), np.zeros((n, H), self._dtype)) for H in self.hidden_sizes]

    def step(self, x, state):
        """Advance one time step for ``x[n, n_features]``; returns logits and new state."""
        check_norm_stats(self)
        p = self._param_index()
        h = np.asarray(x, dtype=self._dtype).reshape(-1, self.n_features_in_)
        new_state = []
        for i, (h_prev, c_prev) in enumerate(state):
            h, c, _ = L.lstm_step(h, h_prev, c_prev, p[f"lstm{i + 1}.W"].value, p[f"lstm{i + 1}.b"].value)
            new_state.append((h, c))
        return L.dense_forward(h, p["fc.W"].value, p["fc.b"].value), new_state

    def fitted_state(self) -> dict:
        return {**super().fitted_state(), "n_features_in": self.n_features_in_}

    def restore_fitted(self, tensors, state):
        self.n_features_in_ = state["n_features_in"]
        self.classes_ = np.array([0, 1])
        super().restore_fitted(tensors, state)
