from __future__ import annotations

import numpy as np
from sklearn.base import TransformerMixin
from sklearn.utils.validation import check_array

from ..nn.layers import dense_backward, dense_forward
from ..nn.optim import Parameter, glorot_uniform
from .base import NeuralEstimator, check_norm_stats


class AutoencoderTransformer(TransformerMixin, NeuralEstimator):
    """Dense autoencoder over flattened 5-sample windows.

    Default layout is 400-390-370-390-400 with tanh on the hidden layers and a
    linear reconstruction layer, trained on mean squared error.
    ``transform`` returns the 370 bottleneck activations followed by the
    per-window reconstruction MSE.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Widths of the hidden layers; the middle one is the bottleneck.
    norm_stats : NormStats or (min, max)
        Scale the inputs were normalized with.  Required for ``transform``.
    """

    def __init__(self, hidden_sizes=(390, 370, 390), learning_rate=1e-3, batch_size=64,
                 max_epochs=50, patience=5, random_state=0, norm_stats=None):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state
        self.norm_stats = norm_stats

    @property
    def bottleneck_index(self) -> int:
        return len(self.hidden_sizes) // 2

    def _widths(self):
        return [self.n_features_in_, *self.hidden_sizes, self.n_features_in_]

    def _init_params(self, rng):
        params = []
        w = self._widths()
        for i, (a, b) in enumerate(zip(w[:-1], w[1:])):
            params.append(Parameter(f"dense{i}.W", glorot_uniform(rng, (a, b), a, b, self._dtype)))
            params.append(Parameter(f"dense{i}.b", np.zeros(b, dtype=self._dtype)))
        return params

    def _forward(self, X):
        p = self._param_index()
        acts = [X]
        pre = []
        n_layers = len(self.hidden_sizes) + 1
        h = X
        for i in range(n_layers):
            z = dense_forward(h, p[f"dense{i}.W"].value, p[f"dense{i}.b"].value)
            pre.append(z)
            h = np.tanh(z) if i < n_layers - 1 else z
            acts.append(h)
        return acts, pre

    def _train_batch(self, X, y=None):
        p = self._param_index()
        acts, _ = self._forward(X)
        out = acts[-1]
        diff = out - X
        loss = float(np.mean(diff * diff))
        grad = (2.0 / diff.size) * diff
        n_layers = len(self.hidden_sizes) + 1
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                grad = grad * (1 - acts[i + 1] ** 2)
            W = p[f"dense{i}.W"]
            dx, dW, db = dense_backward(grad, acts[i], W.value)
            W.grad += dW
            p[f"dense{i}.b"].grad += db
            grad = dx
        return loss

    def _eval_loss(self, X, y=None):
        out = self._forward(X)[0][-1]
        return float(np.mean((out - X) ** 2))

    def fit(self, X, y=None, X_val=None):
        X = check_array(X, dtype=self._dtype)
        self.n_features_in_ = X.shape[1]
        if X_val is not None:
            X_val = check_array(X_val, dtype=self._dtype)
        return self._fit_loop(X, None, X_val, None)

    def reconstruct(self, X):
        self._check_fitted()
        check_norm_stats(self)
        X = check_array(X, dtype=self._dtype)
        return self._forward(X)[0][-1]

    def transform(self, X):
        self._check_fitted()
        check_norm_stats(self)
        X = check_array(X, dtype=self._dtype)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = []
        for s in range(0, len(X), 1024):
            acts, _ = self._forward(X[s:s + 1024])
            err = np.mean((acts[-1] - acts[0]) ** 2, axis=1, keepdims=True)
            out.append(np.hstack([acts[self.bottleneck_index + 1], err]))
        return np.vstack(out) if out else np.empty((0, self.hidden_sizes[self.bottleneck_index] + 1), self._dtype)

    def fitted_state(self) -> dict:
        return {**super().fitted_state(), "n_features_in": self.n_features_in_}

    def restore_fitted(self, tensors, state):
        self.n_features_in_ = state["n_features_in"]
        super().restore_fitted(tensors, state)
