"""Randomized finite-difference checks for every layer type.

Each check builds a float64 scalar loss ``sum(output * R)`` (or the
cross-entropy itself) on random shapes and compares the analytic gradients
of every input and parameter with central differences.  Ops that are linear
in each argument are probed with a large step (exact up to rounding) and held
to 1e-6; everything else uses a small step and 1e-4.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .gradcheck import GradCheckReport, gradient_check

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-4

# the stacked CNN accumulates ~1e-10 of rounding noise in its differences,
# so gradients below this magnitude are compared absolutely
FLOORS = {"cnn": 1e-4}

LAYER_TYPES = ("dense", "conv2d", "batchnorm", "relu", "softmax_ce", "lstm_step", "lstm_sequence", "autoencoder", "cnn")


def _ri(rng, lo, hi):
    return int(rng.integers(lo, hi + 1))


def _dense(rng, k):
    n, di, do = _ri(rng, 1, 4), _ri(rng, 1, 6), _ri(rng, 1, 6)
    x, W, b = rng.normal(size=(n, di)), rng.normal(size=(di, do)), rng.normal(size=do)
    R = rng.normal(size=(n, do))
    dx, dW, db = L.dense_backward(R, x, W)
    t = {"x": x, "W": W, "b": b}
    return (lambda: float(np.sum(L.dense_forward(x, W, b) * R))), {"x": dx * k, "W": dW * k, "b": db * k}, t, LINEAR_TOL, 1e-3


def _conv(rng, k):
    n, H, W_, C, O = _ri(rng, 1, 2), _ri(rng, 3, 6), _ri(rng, 3, 6), _ri(rng, 1, 3), _ri(rng, 1, 3)
    kh, kw = _ri(rng, 1, H), _ri(rng, 1, W_)
    x, K = rng.normal(size=(n, H, W_, C)), rng.normal(size=(kh, kw, C, O))
    R = rng.normal(size=(n, H - kh + 1, W_ - kw + 1, O))
    dx, dK = L.conv2d_backward(R, x, K)
    return (lambda: float(np.sum(L.conv2d_forward(x, K) * R))), {"x": dx * k, "K": dK * k}, {"x": x, "K": K}, LINEAR_TOL, 1e-3


def _bn(rng, k):
    n, H, W_, C = _ri(rng, 2, 4), _ri(rng, 1, 3), _ri(rng, 1, 3), _ri(rng, 1, 3)
    x = rng.normal(size=(n, H, W_, C)) * 2 + 1
    g, b = rng.normal(size=C), rng.normal(size=C)
    R = rng.normal(size=x.shape)
    state = L.BatchNormState(C, dtype=np.float64)
    _, cache = L.batchnorm_forward(x, g, b, state, True)
    dx, dg, db = L.batchnorm_backward(R, cache)
    f = lambda: float(np.sum(L.batchnorm_forward(x, g, b, L.BatchNormState(C, dtype=np.float64), True)[0] * R))
    return f, {"x": dx * k, "gamma": dg * k, "beta": db * k}, {"x": x, "gamma": g, "beta": b}, NONLINEAR_TOL, 1e-5


def _relu(rng, k):
    x = rng.normal(size=(_ri(rng, 1, 4), _ri(rng, 1, 6)))
    x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x + 1e-12), x)
    R = rng.normal(size=x.shape)
    return (lambda: float(np.sum(L.relu_forward(x) * R))), {"x": L.relu_backward(R, x) * k}, {"x": x}, NONLINEAR_TOL, 1e-3


def _softmax_ce(rng, k):
    n = _ri(rng, 1, 8)
    z = rng.normal(size=(n, 2)) * 2
    y = rng.integers(0, 2, size=n)
    _, dz = L.softmax_crossentropy(z, y)
    return (lambda: L.softmax_crossentropy(z, y)[0]), {"logits": dz * k}, {"logits": z}, NONLINEAR_TOL, 1e-5


def _lstm_step(rng, k):
    n, d, H = _ri(rng, 1, 3), _ri(rng, 1, 4), _ri(rng, 1, 5)
    x, h, c = rng.normal(size=(n, d)), rng.normal(size=(n, H)), rng.normal(size=(n, H))
    W, b = rng.normal(size=(d + H, 4 * H)) * 0.5, rng.normal(size=4 * H) * 0.5
    R1, R2 = rng.normal(size=(n, H)), rng.normal(size=(n, H))

    def f():
        h2, c2, _ = L.lstm_step(x, h, c, W, b)
        return float(np.sum(h2 * R1) + np.sum(c2 * R2))

    _, _, cache = L.lstm_step(x, h, c, W, b)
    dx, dh, dc, dW, db = L.lstm_step_backward(R1, R2, cache, W)
    grads = {"x": dx, "h": dh, "c": dc, "W": dW, "b": db}
    return f, {kk: v * k for kk, v in grads.items()}, {"x": x, "h": h, "c": c, "W": W, "b": b}, NONLINEAR_TOL, 1e-5


def _lstm_seq(rng, k):
    n, T, d, H = _ri(rng, 1, 3), _ri(rng, 2, 5), _ri(rng, 1, 4), _ri(rng, 1, 4)
    x = rng.normal(size=(n, T, d))
    W, b = rng.normal(size=(d + H, 4 * H)) * 0.5, rng.normal(size=4 * H) * 0.5
    R = rng.normal(size=(n, T, H))
    hs, _, caches = L.lstm_forward(x, W, b)
    dx, dW, db = L.lstm_backward(R, caches, W)
    f = lambda: float(np.sum(L.lstm_forward(x, W, b)[0] * R))
    return f, {"x": dx * k, "W": dW * k, "b": db * k}, {"x": x, "W": W, "b": b}, NONLINEAR_TOL, 1e-5


def _with_float64(model, rng_seed):
    from ..seeding import make_rng

    model._dtype = np.float64
    model.params_ = model._init_params(make_rng(rng_seed, "init"))
    return model


def _autoencoder(rng, k):
    from ..models.autoencoder import AutoencoderTransformer

    d = _ri(rng, 3, 8)
    ae = AutoencoderTransformer(hidden_sizes=(_ri(rng, 2, 6), _ri(rng, 1, 4), _ri(rng, 2, 6)),
                                random_state=int(rng.integers(1 << 31)))
    ae.n_features_in_ = d
    _with_float64(ae, ae.random_state)
    X = rng.normal(size=(_ri(rng, 1, 4), d))
    for p in ae.params_:
        p.grad = np.zeros_like(p.value)
    ae._train_batch(X)
    grads = {p.name: p.grad * k for p in ae.params_}
    return (lambda: ae._eval_loss(X)), grads, {p.name: p.value for p in ae.params_}, NONLINEAR_TOL, 1e-5


def _cnn(rng, k):
    """Scaled-down CNN: 15x8 window, 9x1x2 temporal and 6x8x3 spatial filters."""
    from ..models.cnn import CnnWindowClassifier

    m = CnnWindowClassifier(window_len=15, n_servers=8, temporal_filters=2, spatial_filters=3,
                            random_state=int(rng.integers(1 << 31)))
    _with_float64(m, m.random_state)
    for p in m.params_:
        if p.name.endswith(("gamma", "beta")):
            p.value[...] = rng.normal(size=p.value.shape) * 0.5 + (1.0 if p.name.endswith("gamma") else 0.0)
    X = rng.normal(size=(_ri(rng, 2, 3), 15, 8, 1))
    y = rng.integers(0, 2, size=len(X))

    def f():
        logits, _ = m._forward(X, train=True)
        return L.softmax_crossentropy(logits, y)[0]

    logits, cache = m._forward(X, train=True)
    _, dlogits = L.softmax_crossentropy(logits, y)
    dX = m._backward(dlogits, cache)
    grads = {p.name: p.grad * k for p in m.params_}
    grads["input"] = dX * k
    tensors = {p.name: p.value for p in m.params_}
    tensors["input"] = X
    return f, grads, tensors, NONLINEAR_TOL, 1e-6


_BUILDERS = {
    "dense": _dense, "conv2d": _conv, "batchnorm": _bn, "relu": _relu, "softmax_ce": _softmax_ce,
    "lstm_step": _lstm_step, "lstm_sequence": _lstm_seq, "autoencoder": _autoencoder, "cnn": _cnn,
}


@dataclass
class SuiteResult:
    reports: list[GradCheckReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def run_suite(trials: int = 100, seed: int = 0, corrupt: str | None = None, layers=LAYER_TYPES,
              max_entries: int | None = 64) -> SuiteResult:
    """Check every layer type over ``trials`` random draws.

    ``corrupt`` names a layer whose analytic gradients are doubled before
    comparison, as a negative control.
    """
    if corrupt is not None and corrupt not in _BUILDERS:
        raise ValueError(f"unknown layer {corrupt!r}; choose from {sorted(_BUILDERS)}")
    start = time.perf_counter()
    reports = []
    for name in layers:
        rng = np.random.default_rng([seed, LAYER_TYPES.index(name)])
        worst = None
        for _ in range(trials):
            f, grads, tensors, tol, step = _BUILDERS[name](rng, 2.0 if corrupt == name else 1.0)
            rep = gradient_check(name, f, grads, tensors, tol, step, max_entries, rng, FLOORS.get(name, 1e-8))
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                worst = rep
            if not rep.passed and corrupt == name:
                break
        reports.append(GradCheckReport(name, worst.max_rel_error, worst.tolerance,
                                       worst.n_checked, worst.worst))
    return SuiteResult(reports, time.perf_counter() - start)
