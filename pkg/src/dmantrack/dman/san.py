"""Spatial attention network: shared conv embedding, cross-image matching and
attention-masked pooling, trained with identification + verification losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..filter_core import NumericFailure
from ..imaging import InvalidArgument
from . import layers as L


@dataclass
class SanConfig:
    input_size: int = 64
    channels: tuple = (16, 32, 32)  # one stride-2 conv per entry
    d_c: int = 64
    n_ids: int = 10
    uniform_attention: bool = False  # B2 ablation: skip the matching layer
    tie_combine: bool = False  # share the combine weights of both halves
    seed: int = 0

    @property
    def grid(self):
        g = self.input_size
        for _ in self.channels:
            g = (g + 1) // 2
        return g

    @property
    def n_locations(self):
        return self.grid * self.grid


def init_san(cfg: SanConfig) -> dict:
    if cfg.input_size < 2 ** len(cfg.channels):
        raise InvalidArgument("input size too small for the conv stack")
    rng = np.random.default_rng(cfg.seed)
    p = {}
    ci = 3
    for k, co in enumerate(cfg.channels):
        p[f"conv{k}.w"] = rng.normal(0.0, np.sqrt(2.0 / (9 * ci)), (co, ci, 3, 3))
        p[f"conv{k}.b"] = np.zeros(co)
        ci = co
    C, N = ci, cfg.n_locations
    p["theta_s"] = rng.normal(0.0, 0.1, N)
    if cfg.tie_combine:
        p["combine.w"] = rng.normal(0.0, np.sqrt(1.0 / C), (cfg.d_c, C))
    else:
        p["combine.w"] = rng.normal(0.0, np.sqrt(1.0 / (2 * C)), (cfg.d_c, 2 * C))
    p["combine.b"] = np.full(cfg.d_c, 0.01)
    p["verify.w"] = rng.normal(0.0, np.sqrt(1.0 / cfg.d_c), cfg.d_c)
    p["verify.b"] = np.zeros(1)
    p["id.w"] = rng.normal(0.0, np.sqrt(1.0 / C), (cfg.n_ids, C))
    p["id.b"] = np.zeros(cfg.n_ids)
    return p


def _as_batch(imgs, cfg):
    x = np.asarray(imgs, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (cfg.input_size, cfg.input_size, 3):
        raise InvalidArgument(f"expected {cfg.input_size}x{cfg.input_size}x3 inputs, got {x.shape[1:]}")
    return np.ascontiguousarray((x - 0.5).transpose(0, 3, 1, 2))


def embed_batch(imgs, params, cfg: SanConfig, cache=False):
    """``(B, S, S, 3)`` images -> ``(B, N, C)`` channel-normalized fibers (row-major N)."""
    h = _as_batch(imgs, cfg)
    caches = []
    n = len(cfg.channels)
    for k in range(n):
        z, cc = L.conv3x3_s2(h, params[f"conv{k}.w"], params[f"conv{k}.b"])
        # no rectifier on the last layer so that fibers can point anywhere
        h = L.relu(z) if k < n - 1 else z
        caches.append((cc, z))
    B, C = h.shape[:2]
    fibers = h.reshape(B, C, -1).transpose(0, 2, 1)
    X, ncache = L.l2_normalize(fibers, axis=2)
    if cache:
        return X, (caches, ncache, h.shape)
    return X


def embed_backward(dX, params, cfg, cache, grads):
    caches, ncache, hshape = cache
    dfib = L.l2_normalize_backward(dX, ncache, axis=2)
    dh = dfib.transpose(0, 2, 1).reshape(hshape)
    n = len(cfg.channels)
    for k in reversed(range(n)):
        cc, z = caches[k]
        dz = dh * (z > 0) if k < n - 1 else dh
        dh, dw, db = L.conv3x3_s2_backward(dz, params[f"conv{k}.w"], cc)
        grads[f"conv{k}.w"] += dw
        grads[f"conv{k}.b"] += db


def embed(img, params, cfg: SanConfig) -> np.ndarray:
    """Single image -> ``(H, W, C)`` embedding tensor."""
    X = embed_batch(img, params, cfg)[0]
    g = cfg.grid
    return X.reshape(g, g, -1)


def similarity_matrix(Xa, Xb) -> np.ndarray:
    """Cosine similarities between all fibers of two ``(H, W, C)`` or ``(N, C)`` embeddings."""
    Xa, Xb = np.asarray(Xa), np.asarray(Xb)
    if Xa.shape != Xb.shape:
        raise InvalidArgument(f"embedding shapes differ: {Xa.shape} vs {Xb.shape}")
    Xa = Xa.reshape(-1, Xa.shape[-1])
    Xb = Xb.reshape(-1, Xb.shape[-1])
    return Xa @ Xb.T


def spatial_attention(S, theta_s) -> np.ndarray:
    """Softmax over locations of ``theta_s . s_i`` for every row ``s_i`` of ``S``."""
    return L.softmax(S @ theta_s, axis=-1)


def masked_pool(X, A) -> np.ndarray:
    X, A = np.asarray(X), np.asarray(A)
    Xf = X.reshape(-1, X.shape[-1]) if X.ndim == 3 else X
    Af = A.reshape(-1)
    if Xf.shape[0] != Af.shape[0]:
        raise InvalidArgument("attention map and embedding disagree on the number of locations")
    return Af @ Xf


def _pair_forward(Xa, Xb, params, cfg):
    """Batched head on embeddings ``(B, N, C)``; returns outputs and a cache."""
    B, N, C = Xa.shape
    S = Xa @ Xb.transpose(0, 2, 1)
    if cfg.uniform_attention:
        Aa = np.full((B, N), 1.0 / N)
        Ab = np.full((B, N), 1.0 / N)
    else:
        theta = params["theta_s"]
        Aa = L.softmax(S @ theta, axis=1)
        Ab = L.softmax(S.transpose(0, 2, 1) @ theta, axis=1)
    xa = np.einsum("bn,bnc->bc", Aa, Xa)
    xb = np.einsum("bn,bnc->bc", Ab, Xb)
    if cfg.tie_combine:
        z = (xa + xb) @ params["combine.w"].T + params["combine.b"]
    else:
        z = np.concatenate([xa, xb], axis=1) @ params["combine.w"].T + params["combine.b"]
    xc = L.relu(z)
    v_logit = xc @ params["verify.w"] + params["verify.b"][0]
    id_a = xa @ params["id.w"].T + params["id.b"]
    id_b = xb @ params["id.w"].T + params["id.b"]
    out = dict(S=S, Aa=Aa, Ab=Ab, xa=xa, xb=xb, z=z, xc=xc, v_logit=v_logit, id_a=id_a, id_b=id_b)
    return out


def san_forward(img_a, img_b, params, cfg: SanConfig) -> dict:
    """Forward one pair; attention maps are returned on the ``H x W`` grid."""
    X = embed_batch(np.stack([img_a, img_b]), params, cfg)
    return san_forward_embedded(X[0:1], X[1:2], params, cfg, single=True)


def san_forward_embedded(Xa, Xb, params, cfg, single=False):
    out = _pair_forward(Xa, Xb, params, cfg)
    g = cfg.grid
    res = dict(
        x_c=out["xc"], p_verify=L.sigmoid(out["v_logit"]),
        p_id_a=L.softmax(out["id_a"], axis=1), p_id_b=L.softmax(out["id_b"], axis=1),
        A_a=out["Aa"].reshape(-1, g, g), A_b=out["Ab"].reshape(-1, g, g),
        xbar_a=out["xa"], xbar_b=out["xb"],
    )
    if single:
        res = {k: v[0] for k, v in res.items()}
        res["p_verify"] = float(res["p_verify"])
    return res


def san_loss(params, cfg: SanConfig, imgs_a, imgs_b, ids_a, ids_b, same):
    """Joint loss ``CE(id_a) + CE(id_b) + BCE(verify)`` and its gradients."""
    B = len(imgs_a)
    X, cache = embed_batch(np.concatenate([imgs_a, imgs_b]), params, cfg, cache=True)
    Xa, Xb = X[:B], X[B:]
    o = _pair_forward(Xa, Xb, params, cfg)
    la, g_ida = L.cross_entropy(o["id_a"], np.asarray(ids_a))
    lb, g_idb = L.cross_entropy(o["id_b"], np.asarray(ids_b))
    lv, g_v = L.bce_with_logits(o["v_logit"], same)
    loss = la + lb + lv
    if not np.isfinite(loss):
        raise NumericFailure("non-finite SAN loss")

    g = {k: np.zeros_like(v) for k, v in params.items()}
    g["verify.w"] += o["xc"].T @ g_v
    g["verify.b"] += g_v.sum()
    dxc = g_v[:, None] * params["verify.w"][None]
    dz = dxc * (o["z"] > 0)
    g["combine.b"] += dz.sum(axis=0)
    if cfg.tie_combine:
        g["combine.w"] += dz.T @ (o["xa"] + o["xb"])
        dxa = dz @ params["combine.w"]
        dxb = dxa.copy()
    else:
        g["combine.w"] += dz.T @ np.concatenate([o["xa"], o["xb"]], axis=1)
        dcat = dz @ params["combine.w"]
        C = Xa.shape[2]
        dxa, dxb = dcat[:, :C].copy(), dcat[:, C:].copy()
    g["id.w"] += g_ida.T @ o["xa"] + g_idb.T @ o["xb"]
    g["id.b"] += g_ida.sum(axis=0) + g_idb.sum(axis=0)
    dxa += g_ida @ params["id.w"]
    dxb += g_idb @ params["id.w"]

    Aa, Ab, S = o["Aa"], o["Ab"], o["S"]
    dXa = Aa[:, :, None] * dxa[:, None, :]
    dXb = Ab[:, :, None] * dxb[:, None, :]
    if not cfg.uniform_attention:
        theta = params["theta_s"]
        dla = L.softmax_backward(Aa, np.einsum("bnc,bc->bn", Xa, dxa), axis=1)
        dlb = L.softmax_backward(Ab, np.einsum("bnc,bc->bn", Xb, dxb), axis=1)
        # logits_a = S theta, logits_b = S^T theta
        g["theta_s"] += np.einsum("bij,bi->j", S, dla) + np.einsum("bij,bj->i", S, dlb)
        dS = dla[:, :, None] * theta[None, None, :] + theta[None, :, None] * dlb[:, None, :]
        dXa += dS @ Xb
        dXb += dS.transpose(0, 2, 1) @ Xa
    embed_backward(np.concatenate([dXa, dXb]), params, cfg, cache, g)
    return loss, g, dict(id_a=la, id_b=lb, verify=lv)
