"""Numpy layers with hand-written backward passes (NCHW, float64)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-12


def conv3x3_s2(x, w, b):
    """3x3 convolution, stride 2, zero padding 1.  ``x (B, Ci, H, W)``, ``w (Co, Ci, 3, 3)``."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True) + b[None, :, None, None]
    return out, (x.shape, win)


def conv3x3_s2_backward(dout, w, cache):
    x_shape, win = cache
    B, Ci, H, W = x_shape
    Ho, Wo = dout.shape[2:]
    dw = np.einsum("bchwij,bohw->ocij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dwin = np.einsum("bohw,ocij->bchwij", dout, w, optimize=True)
    dxp = np.zeros((B, Ci, H + 2, W + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + 2 * Ho:2, j:j + 2 * Wo:2] += dwin[..., i, j]
    return dxp[:, :, 1:H + 1, 1:W + 1], dw, db


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    return np.logaddexp(0.0, z)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - (p * dp).sum(axis=axis, keepdims=True))


def l2_normalize(x, axis=-1):
    """Unit-norm fibers along ``axis``; fibers with norm below NORM_EPS map to zero."""
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    safe = norm >= NORM_EPS
    y = np.where(safe, x / np.where(safe, norm, 1.0), 0.0)
    return y, (y, norm, safe)


def l2_normalize_backward(dy, cache, axis=-1):
    y, norm, safe = cache
    proj = (y * dy).sum(axis=axis, keepdims=True)
    return np.where(safe, (dy - y * proj) / np.where(safe, norm, 1.0), 0.0)


def bce_with_logits(logit, target):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    logit = np.asarray(logit, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    loss = softplus(logit) - target * logit
    grad = (sigmoid(logit) - target) / logit.size
    return float(loss.mean()), grad


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over rows and its gradient."""
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return float(loss), grad / B
