from __future__ import annotations

import numpy as np
from sklearn.base import ClassifierMixin

from ..nn import layers as L
from ..nn.optim import Parameter, glorot_uniform
from .base import NeuralEstimator, check_norm_stats


class CnnWindowClassifier(ClassifierMixin, NeuralEstimator):
    """Temporal-then-spatial CNN over ``[window_len, n_servers]`` grids.

    Stage 1 convolves along time only (``temporal_len x 1`` kernel), stage 2
    spans every server (``spatial_len x n_servers`` kernel).  Each stage is
    conv -> batchnorm -> ReLU with valid padding and stride 1; a dense layer
    maps the flattened features to two logits.  With the defaults a 15x80
    window becomes 7x80x16, then 2x1x20, then 40 features.
    """

    def __init__(self, window_len=15, n_servers=80, temporal_len=9, temporal_filters=16,
                 spatial_len=6, spatial_filters=20, learning_rate=3e-6, batch_size=32,
                 max_epochs=200, patience=10, bn_momentum=0.9, random_state=0, norm_stats=None):
        self.window_len = window_len
        self.n_servers = n_servers
        self.temporal_len = temporal_len
        self.temporal_filters = temporal_filters
        self.spatial_len = spatial_len
        self.spatial_filters = spatial_filters
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.bn_momentum = bn_momentum
        self.random_state = random_state
        self.norm_stats = norm_stats

    @property
    def n_flat(self) -> int:
        rows = self.window_len - self.temporal_len + 1 - self.spatial_len + 1
        if rows < 1:
            raise ValueError("window too short for the temporal and spatial kernels")
        return rows * self.spatial_filters

    def _init_params(self, rng):
        kt, ft, ks, fs = self.temporal_len, self.temporal_filters, self.spatial_len, self.spatial_filters
        S, d = self.n_servers, self._dtype
        self._bn = [L.BatchNormState(ft, self.bn_momentum, dtype=d), L.BatchNormState(fs, self.bn_momentum, dtype=d)]
        return [
            Parameter("temporal.kernel", glorot_uniform(rng, (kt, 1, 1, ft), kt, kt * ft, d)),
            Parameter("bn1.gamma", np.ones(ft, d)),
            Parameter("bn1.beta", np.zeros(ft, d)),
            Parameter("spatial.kernel", glorot_uniform(rng, (ks, S, ft, fs), ks * S * ft, ks * S * fs, d)),
            Parameter("bn2.gamma", np.ones(fs, d)),
            Parameter("bn2.beta", np.zeros(fs, d)),
            Parameter("fc.W", glorot_uniform(rng, (self.n_flat, 2), self.n_flat, 2, d)),
            Parameter("fc.b", np.zeros(2, d)),
        ]

    def _buffers(self):
        return {f"bn{i + 1}.{k}": getattr(s, k) for i, s in enumerate(self._bn)
                for k in ("running_mean", "running_var")}

    def _set_buffers(self, buffers):
        if not hasattr(self, "_bn"):
            raise RuntimeError("parameters must be initialised before buffers")
        for i, s in enumerate(self._bn):
            for k in ("running_mean", "running_var"):
                key = f"bn{i + 1}.{k}"
                if key in buffers:
                    setattr(s, k, buffers[key].copy())

    def _as_grid(self, X):
        X = np.asarray(X, dtype=self._dtype)
        if X.ndim == 3:
            X = X[..., None]
        expected = (self.window_len, self.n_servers, 1)
        if X.ndim != 4 or X.shape[1:] != expected:
            raise ValueError(f"expected windows of shape [n, {self.window_len}, {self.n_servers}(, 1)], got {X.shape}")
        return X

    def _forward(self, X, train: bool):
        p = self._param_index()
        z1 = L.conv2d_forward(X, p["temporal.kernel"].value)
        b1, bn1 = L.batchnorm_forward(z1, p["bn1.gamma"].value, p["bn1.beta"].value, self._bn[0], train)
        a1 = L.relu_forward(b1)
        z2 = L.conv2d_forward(a1, p["spatial.kernel"].value)
        b2, bn2 = L.batchnorm_forward(z2, p["bn2.gamma"].value, p["bn2.beta"].value, self._bn[1], train)
        a2 = L.relu_forward(b2)
        flat = a2.reshape(len(X), -1)
        logits = L.dense_forward(flat, p["fc.W"].value, p["fc.b"].value)
        cache = dict(X=X, b1=b1, bn1=bn1, a1=a1, b2=b2, bn2=bn2, a2=a2, flat=flat)
        return logits, cache

    def _backward(self, dlogits, cache):
        p = self._param_index()
        dflat, dW, db = L.dense_backward(dlogits, cache["flat"], p["fc.W"].value)
        p["fc.W"].grad += dW
        p["fc.b"].grad += db
        da2 = dflat.reshape(cache["a2"].shape)
        dz2, dg, dbeta = L.batchnorm_backward(L.relu_backward(da2, cache["b2"]), cache["bn2"])
        p["bn2.gamma"].grad += dg
        p["bn2.beta"].grad += dbeta
        da1, dk2 = L.conv2d_backward(dz2, cache["a1"], p["spatial.kernel"].value)
        p["spatial.kernel"].grad += dk2
        dz1, dg, dbeta = L.batchnorm_backward(L.relu_backward(da1, cache["b1"]), cache["bn1"])
        p["bn1.gamma"].grad += dg
        p["bn1.beta"].grad += dbeta
        dX, dk1 = L.conv2d_backward(dz1, cache["X"], p["temporal.kernel"].value)
        p["temporal.kernel"].grad += dk1
        return dX

    def _train_batch(self, X, y):
        logits, cache = self._forward(X, train=True)
        loss, dlogits = L.softmax_crossentropy(logits, y)
        self._backward(dlogits, cache)
        return loss

    def _eval_loss(self, X, y):
        return L.softmax_crossentropy(self._forward(X, train=False)[0], y)[0]

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._as_grid(X)
        y = np.asarray(y).astype(np.int64)
        self.classes_ = np.array([0, 1])
        if X_val is not None:
            X_val, y_val = self._as_grid(X_val), np.asarray(y_val).astype(np.int64)
        return self._fit_loop(X, y, X_val, y_val)

    def decision_function(self, X):
        """Logits ``[n, 2]`` in eval mode."""
        self._check_fitted()
        check_norm_stats(self)
        X = self._as_grid(X)
        return np.concatenate([self._forward(X[s:s + 512], train=False)[0] for s in range(0, len(X), 512)]) \
            if len(X) else np.empty((0, 2), self._dtype)

    def predict_proba(self, X):
        return L.softmax(self.decision_function(X))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def forward_shapes(self, X) -> dict[str, tuple]:
        """Intermediate activation shapes for ``X`` (eval mode)."""
        self._check_fitted()
        X = self._as_grid(X)
        logits, cache = self._forward(X, train=False)
        return {"input": X.shape, "temporal": cache["a1"].shape, "spatial": cache["a2"].shape,
                "flatten": cache["flat"].shape, "logits": logits.shape}

    def init_untrained(self):
        """Initialise parameters without training (used as a baseline)."""
        from ..seeding import make_rng

        self.params_ = self._init_params(make_rng(self.random_state, "init"))
        self.classes_ = np.array([0, 1])
        self.history_, self.best_epoch_, self.best_val_loss_, self.n_epochs_, self.adam_steps_ = [], 0, float("nan"), 0, 0
        return self

    def restore_fitted(self, tensors, state):
        self.classes_ = np.array([0, 1])
        super().restore_fitted(tensors, state)
