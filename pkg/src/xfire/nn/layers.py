"""Forward/backward pairs for the layer types the detectors need.

Arrays are plain numpy; every function is dtype-preserving so the same code
runs in float32 for training and float64 for gradient checking.  Image-like
tensors are NHWC.  Backward functions take the upstream gradient and whatever
the forward pass cached, and return gradients in argument order.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# -- dense -------------------------------------------------------------------

def dense_forward(x, W, b):
    _check(x.ndim == 2 and W.ndim == 2 and b.ndim == 1, "dense expects x[n,d_in], W[d_in,d_out], b[d_out]")
    _check(x.shape[1] == W.shape[0] and W.shape[1] == b.shape[0],
           f"dense shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(dy, x, W):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# -- conv2d (valid padding, stride 1, cross-correlation) ----------------------

def conv2d_forward(x, k):
    """``y[n,i,j,o] = sum_{a,b,c} x[n,i+a,j+b,c] * k[a,b,c,o]``."""
    _check(x.ndim == 4 and k.ndim == 4, "conv2d expects x[n,H,W,C] and k[kh,kw,C,O]")
    n, H, W, C = x.shape
    kh, kw, kc, _ = k.shape
    _check(kc == C, f"conv2d channel mismatch: input has {C}, kernel expects {kc}")
    _check(kh <= H and kw <= W, f"kernel {kh}x{kw} larger than input {H}x{W}")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # [n,Ho,Wo,C,kh,kw]
    return np.tensordot(win, k.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))


def conv2d_backward(dy, x, k):
    kh, kw, C, O = k.shape
    n, Ho, Wo, _ = dy.shape
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    dk = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)

    # contribution of each output position to its receptive field
    contrib = np.tensordot(dy, k, axes=([3], [3]))  # [n,Ho,Wo,kh,kw,C]
    dx = np.zeros_like(x)
    if Ho * Wo <= kh * kw:
        for i in range(Ho):
            for j in range(Wo):
                dx[:, i:i + kh, j:j + kw, :] += contrib[:, i, j]
    else:
        for a in range(kh):
            for b in range(kw):
                dx[:, a:a + Ho, b:b + Wo, :] += contrib[:, :, :, a, b, :]
    return dx, dk


# -- batch normalization over (n, H, W) per channel --------------------------

class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batchnorm_forward(x, gamma, beta, state: BatchNormState, train: bool):
    axes = tuple(range(x.ndim - 1))
    if train:
        n = x.shape[0]
        _check(n >= 2, "batchnorm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(state.running_mean.dtype)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(state.running_var.dtype)
    else:
        mean, var = state.running_mean.astype(x.dtype), state.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, train)


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# -- activations and loss ----------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_crossentropy(logits, labels):
    """Mean NLL over rows of ``logits[n, k]`` and its fused gradient."""
    logits = np.asarray(logits)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    flat = logits.reshape(-1, logits.shape[-1])
    _check(flat.shape[0] == labels.shape[0], "one label per logit row required")
    n = flat.shape[0]
    z = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = softmax(flat)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad.reshape(logits.shape)


# -- LSTM --------------------------------------------------------------------
# Gate layout along the 4H axis: input, forget, output, candidate.

def lstm_step(x, h, c, W, b):
    """One step for a batch. ``W`` is ``[d_in + H, 4H]`` acting on ``[x, h]``."""
    H = h.shape[-1]
    _check(W.shape == (x.shape[-1] + H, 4 * H) and b.shape == (4 * H,),
           f"lstm parameter shape mismatch: W{W.shape} b{b.shape} for d_in={x.shape[-1]}, H={H}")
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, o, g, tc)


def lstm_step_backward(dh, dc, cache, W):
    """Gradients of one step given upstream ``dh``/``dc`` on the new state.

    Returns ``(dx, dh_prev, dc_prev, dW, db)``.
    """
    xh, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=-1)
    dW = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ W.T
    d_in = xh.shape[-1] - dh.shape[-1]
    return dxh[:, :d_in], dxh[:, d_in:], dc_prev, dW, db


def lstm_forward(x, W, b, h0=None, c0=None):
    """Run over ``x[n, T, d_in]``; returns ``h[n, T, H]``, final state, caches."""
    n, T, _ = x.shape
    H = b.shape[0] // 4
    h = np.zeros((n, H), dtype=x.dtype) if h0 is None else h0
    c = np.zeros((n, H), dtype=x.dtype) if c0 is None else c0
    hs = np.empty((n, T, H), dtype=x.dtype)
    caches = []
    for t in range(T):
        h, c, cache = lstm_step(x[:, t], h, c, W, b)
        hs[:, t] = h
        caches.append(cache)
    return hs, (h, c), caches


def lstm_backward(dhs, caches, W):
    """Backpropagation through time for :func:`lstm_forward`.

    ``dhs[n, T, H]`` is the loss gradient w.r.t. every emitted hidden state.
    """
    n, T, H = dhs.shape
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1], dtype=W.dtype)
    d_in = W.shape[0] - H
    dx = np.empty((n, T, d_in), dtype=dhs.dtype)
    dh_next = np.zeros((n, H), dtype=dhs.dtype)
    dc_next = np.zeros((n, H), dtype=dhs.dtype)
    for t in reversed(range(T)):
        dx_t, dh_next, dc_next, dW_t, db_t = lstm_step_backward(dhs[:, t] + dh_next, dc_next, caches[t], W)
        dx[:, t] = dx_t
        dW += dW_t
        db += db_t
    return dx, dW, db
