"""Shared minibatch/early-stopping loop for the numpy networks."""
from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..nn.optim import Adam, Parameter
from ..seeding import make_rng
from ..traffic import NormStats

log = logging.getLogger(__name__)


class MissingNormalizationError(RuntimeError):
    """Raised when a model is asked to predict without its normalization stats."""


def check_norm_stats(est) -> NormStats:
    stats = getattr(est, "norm_stats", None)
    if stats is None:
        raise MissingNormalizationError(
            f"{type(est).__name__} has no norm_stats; refusing to predict on data of unknown scale"
        )
    return stats if isinstance(stats, NormStats) else NormStats(*stats)


class NeuralEstimator(BaseEstimator):
    """Base class: subclasses define parameters, forward and backward.

    Subclasses implement ``_init_params(rng)`` returning a list of
    :class:`Parameter`, ``_train_batch(X, y)`` that returns the batch loss
    after filling every ``Parameter.grad``, and ``_eval_loss(X, y)``.  Any
    non-trainable state that must be snapshotted with the best epoch (e.g.
    batchnorm running statistics) is exposed through ``_buffers()``.
    """

    _dtype = np.float32

    def _buffers(self) -> dict[str, np.ndarray]:
        return {}

    def _set_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        pass

    def _snapshot(self):
        return ({p.name: p.value.copy() for p in self.params_},
                {k: v.copy() for k, v in self._buffers().items()})

    def _restore(self, snap):
        values, buffers = snap
        for p in self.params_:
            p.value[...] = values[p.name]
        self._set_buffers(buffers)

    def _eval_loss_batched(self, X, y, batch_size=256):
        total, n = 0.0, len(X)
        for s in range(0, n, batch_size):
            yb = None if y is None else y[s:s + batch_size]
            total += self._eval_loss(X[s:s + batch_size], yb) * len(X[s:s + batch_size])
        return total / n

    def _fit_loop(self, X, y, X_val, y_val):
        if len(X) == 0:
            raise ValueError(f"{type(self).__name__}: empty training set")
        rng_init = make_rng(self.random_state, "init")
        rng_shuffle = make_rng(self.random_state, "shuffle")
        self.params_ = self._init_params(rng_init)
        opt = Adam(self.params_, learning_rate=self.learning_rate)

        n = len(X)
        n_batches = max(1, math.ceil(n / self.batch_size))
        best_loss, best_epoch, best = math.inf, 0, None
        self.history_ = []
        for epoch in range(1, self.max_epochs + 1):
            order = rng_shuffle.permutation(n)
            train_loss = 0.0
            for batch in np.array_split(order, n_batches):
                opt.zero_grad()
                loss = self._train_batch(X[batch], y[batch] if y is not None else None)
                self._post_backward()
                opt.step()
                train_loss += loss * len(batch)
            train_loss /= n
            val_loss = self._eval_loss_batched(X_val, y_val) if X_val is not None and len(X_val) else train_loss
            self.history_.append((epoch, float(train_loss), float(val_loss)))
            log.info("%s epoch %d train %.6f val %.6f", type(self).__name__, epoch, train_loss, val_loss)
            if val_loss < best_loss:
                best_loss, best_epoch, best = val_loss, epoch, self._snapshot()
            elif epoch - best_epoch >= self.patience:
                break
        self._restore(best)
        self.best_epoch_ = best_epoch
        self.best_val_loss_ = float(best_loss)
        self.n_epochs_ = len(self.history_)
        self.adam_steps_ = opt.t
        return self

    def _post_backward(self):
        clip = getattr(self, "clip_norm", None)
        if clip:
            total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params_))
            if total > clip:
                for p in self.params_:
                    p.grad *= clip / total

    def _param(self, name) -> Parameter:
        return self._param_index()[name]

    def _param_index(self):
        return {p.name: p for p in self.params_}

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    # checkpoint hooks -----------------------------------------------------
    def get_tensors(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        out = {p.name: p.value for p in self.params_}
        out.update({f"buffer.{k}": v for k, v in self._buffers().items()})
        return out

    def fitted_state(self) -> dict:
        return {"history": [list(h) for h in self.history_], "best_epoch": self.best_epoch_,
                "best_val_loss": self.best_val_loss_, "n_epochs": self.n_epochs_, "adam_steps": self.adam_steps_}

    def restore_fitted(self, tensors: dict[str, np.ndarray], state: dict) -> None:
        self.params_ = self._init_params(make_rng(self.random_state, "init"))
        for p in self.params_:
            src = tensors[p.name]
            if src.shape != p.value.shape:
                raise ValueError(f"checkpoint tensor {p.name} has shape {src.shape}, expected {p.value.shape}")
            p.value = np.array(src, dtype=self._dtype)
            p.grad = np.zeros_like(p.value)
        self._set_buffers({k[len("buffer."):]: np.array(v, dtype=self._dtype)
                           for k, v in tensors.items() if k.startswith("buffer.")})
        self.history_ = [tuple(h) for h in state["history"]]
        self.best_epoch_ = state["best_epoch"]
        self.best_val_loss_ = state["best_val_loss"]
        self.n_epochs_ = state["n_epochs"]
        self.adam_steps_ = state["adam_steps"]
