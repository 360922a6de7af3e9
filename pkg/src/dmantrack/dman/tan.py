"""Temporal attention network: Bi-LSTM over per-observation matching features,
softmax attention over time, attention-weighted pooling and a binary classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..filter_core import NumericFailure
from ..imaging import InvalidArgument
from . import layers as L


@dataclass
class TanConfig:
    d_in: int = 64
    d_h: int = 32
    average_pooling: bool = False  # B3 ablation
    forget_bias: float = -3.0  # initial forget-gate bias; negative starts near memoryless
    seed: int = 0


def init_tan(cfg: TanConfig) -> dict:
    rng = np.random.default_rng(cfg.seed + 1)
    d_in, d_h = cfg.d_in, cfg.d_h
    p = {}
    for side in ("fwd", "bwd"):
        p[f"{side}.w"] = rng.normal(0.0, np.sqrt(1.0 / (d_in + d_h)), (d_in + d_h, 4 * d_h))
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = cfg.forget_bias
        p[f"{side}.b"] = b
    p["theta_h"] = rng.normal(0.0, 0.1, 2 * d_h)
    p["cls.w"] = rng.normal(0.0, np.sqrt(1.0 / (2 * d_h)), 2 * d_h)
    p["cls.b"] = np.zeros(1)
    return p


def _lstm(X, W, b, reverse):
    """Run one direction over ``X (B, T, d_in)``; returns ``H (B, T, d_h)`` and the step cache."""
    B, T, _ = X.shape
    d_h = W.shape[1] // 4
    h = np.zeros((B, d_h))
    c = np.zeros((B, d_h))
    H = np.zeros((B, T, d_h))
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        xh = np.concatenate([X[:, t], h], axis=1)
        z = xh @ W + b
        i = L.sigmoid(z[:, :d_h])
        f = L.sigmoid(z[:, d_h:2 * d_h])
        o = L.sigmoid(z[:, 2 * d_h:3 * d_h])
        g = np.tanh(z[:, 3 * d_h:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        H[:, t] = h
        steps.append((t, xh, i, f, o, g, c_prev, tc))
    return H, steps


def _lstm_backward(dH, W, steps):
    d_h = W.shape[1] // 4
    B = dH.shape[0]
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dh_next = np.zeros((B, d_h))
    dc_next = np.zeros((B, d_h))
    for t, xh, i, f, o, g, c_prev, tc in reversed(steps):
        dh = dH[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
        dW += xh.T @ dz
        db += dz.sum(axis=0)
        dxh = dz @ W.T
        dh_next = dxh[:, -d_h:]
        dc_next = dc * f
    return dW, db


def _forward(X, params, cfg):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    B, T, d = X.shape
    if T < 1:
        raise InvalidArgument("temporal attention needs at least one observation")
    if d != cfg.d_in:
        raise InvalidArgument(f"expected {cfg.d_in}-dim inputs, got {d}")
    Hl, sl = _lstm(X, params["fwd.w"], params["fwd.b"], reverse=False)
    Hr, sr = _lstm(X, params["bwd.w"], params["bwd.b"], reverse=True)
    Hc = np.concatenate([Hl, Hr], axis=2)
    if cfg.average_pooling:
        a = np.full((B, T), 1.0 / T)
    else:
        a = L.softmax(Hc @ params["theta_h"], axis=1)
    hbar = np.einsum("bt,btk->bk", a, Hc)
    logit = hbar @ params["cls.w"] + params["cls.b"][0]
    return dict(Hc=Hc, a=a, hbar=hbar, logit=logit, sl=sl, sr=sr)


def tan_forward(features, params, cfg: TanConfig) -> dict:
    """``features (T, d_in)`` or ``(B, T, d_in)`` -> attention weights and similarity."""
    single = np.ndim(features) == 2
    o = _forward(features, params, cfg)
    res = dict(a=o["a"], similarity=L.sigmoid(o["logit"]), hbar=o["hbar"])
    if single:
        res = {k: v[0] for k, v in res.items()}
        res["similarity"] = float(res["similarity"])
    return res


def tan_loss(params, cfg: TanConfig, features, labels):
    """Binary cross-entropy on the similarity with full BPTT gradients."""
    o = _forward(features, params, cfg)
    loss, dlogit = L.bce_with_logits(o["logit"], labels)
    if not np.isfinite(loss):
        raise NumericFailure("non-finite TAN loss")
    g = {k: np.zeros_like(v) for k, v in params.items()}
    g["cls.w"] += o["hbar"].T @ dlogit
    g["cls.b"] += dlogit.sum()
    dhbar = dlogit[:, None] * params["cls.w"][None]
    Hc, a = o["Hc"], o["a"]
    dHc = a[:, :, None] * dhbar[:, None, :]
    if not cfg.average_pooling:
        de = L.softmax_backward(a, np.einsum("btk,bk->bt", Hc, dhbar), axis=1)
        g["theta_h"] += np.einsum("bt,btk->k", de, Hc)
        dHc += de[:, :, None] * params["theta_h"][None, None, :]
    d_h = cfg.d_h
    dW, db = _lstm_backward(dHc[:, :, :d_h], params["fwd.w"], o["sl"])
    g["fwd.w"] += dW
    g["fwd.b"] += db
    dW, db = _lstm_backward(dHc[:, :, d_h:], params["bwd.w"], o["sr"])
    g["bwd.w"] += dW
    g["bwd.b"] += db
    return loss, g
