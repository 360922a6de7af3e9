"""Two-step training: spatial network on pairs, then the temporal network on
tracklet features produced by the frozen spatial network."""
from __future__ import annotations

import logging
import time

import numpy as np

from . import san as S
from . import tan as T
from .data import IdentityDataset, make_pairs, make_tracklets
from .optim import Adam

log = logging.getLogger(__name__)


def san_train_step(params, cfg: S.SanConfig, batch, opt: Adam):
    loss, grads, parts = S.san_loss(params, cfg, batch.imgs_a, batch.imgs_b, batch.ids_a, batch.ids_b, batch.same)
    opt.step(params, grads)
    return loss, parts


def tan_train_step(tan_params, tan_cfg: T.TanConfig, features, labels, opt: Adam):
    """One optimizer step on precomputed matching features ``(B, T, d_c)``."""
    loss, grads = T.tan_loss(tan_params, tan_cfg, features, labels)
    opt.step(tan_params, grads)
    return loss


def train_san(dataset: IdentityDataset, cfg: S.SanConfig, steps=1000, batch=16, lr=1e-4, seed=0,
              params=None, time_budget=None, callback=None):
    """Returns ``(params, losses)``; stops early when ``time_budget`` seconds elapse."""
    rng = np.random.default_rng(seed)
    params = params if params is not None else S.init_san(cfg)
    opt = Adam(params, lr=lr)
    losses = []
    start = time.monotonic()
    for k in range(steps):
        b = make_pairs(dataset, batch, rng)
        loss, _ = san_train_step(params, cfg, b, opt)
        losses.append(loss)
        if callback is not None:
            callback(k, loss)
        if time_budget is not None and time.monotonic() - start > time_budget:
            log.info("SAN training stopped by time budget after %d steps", k + 1)
            break
    return params, losses


def tracklet_features(san_params, san_cfg, tracklets, detections, chunk=64):
    """Matching features ``x_c`` of every tracklet sample against its detection."""
    B, Tn = tracklets.shape[:2]
    size = tracklets.shape[2:]
    det_X = S.embed_batch(detections, san_params, san_cfg)
    flat = tracklets.reshape(B * Tn, *size)
    trk_X = np.concatenate([S.embed_batch(flat[i:i + chunk], san_params, san_cfg) for i in range(0, len(flat), chunk)])
    det_rep = np.repeat(det_X, Tn, axis=0)
    out = S.san_forward_embedded(trk_X, det_rep, san_params, san_cfg)
    return out["x_c"].reshape(B, Tn, -1)


def train_tan(dataset: IdentityDataset, san_params, san_cfg, tan_cfg: T.TanConfig, steps=500, batch=16,
              lr=1e-4, seed=0, pool=256, T_len=8, params=None, time_budget=None, callback=None):
    """Trains on a pool of tracklets whose features come from the frozen spatial network."""
    rng = np.random.default_rng(seed + 17)
    tb = make_tracklets(dataset, pool, T_len, rng)
    feats = tracklet_features(san_params, san_cfg, tb.tracklets, tb.detections)
    params = params if params is not None else T.init_tan(tan_cfg)
    opt = Adam(params, lr=lr)
    losses = []
    start = time.monotonic()
    for k in range(steps):
        idx = rng.choice(pool, size=min(batch, pool), replace=False)
        losses.append(tan_train_step(params, tan_cfg, feats[idx], tb.labels[idx], opt))
        if callback is not None:
            callback(k, losses[-1])
        if time_budget is not None and time.monotonic() - start > time_budget:
            log.info("TAN training stopped by time budget after %d steps", k + 1)
            break
    return params, losses


def verification_accuracy(san_params, san_cfg, pairs) -> float:
    X = S.embed_batch(np.concatenate([pairs.imgs_a, pairs.imgs_b]), san_params, san_cfg)
    n = len(pairs.imgs_a)
    p = S.san_forward_embedded(X[:n], X[n:], san_params, san_cfg)["p_verify"]
    return float(np.mean((p > 0.5) == (pairs.same > 0)))


def foreign_minimum_rate(san_params, san_cfg, tan_params, tan_cfg, tracklets) -> float:
    """Share of corrupted tracklets whose lowest temporal weight falls on an injected sample.

    Only tracklets paired with a detection of their own identity count: for a
    foreign detection every sample is a mismatch.
    """
    feats = tracklet_features(san_params, san_cfg, tracklets.tracklets, tracklets.detections)
    a = T.tan_forward(feats, tan_params, tan_cfg)["a"]
    hits = [int(np.argmin(a[b])) in pos for b, pos in enumerate(tracklets.foreign)
            if pos and tracklets.labels[b] > 0]
    return float(np.mean(hits)) if hits else float("nan")
