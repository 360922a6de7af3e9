"""Trained attention networks bundled for affinity scoring, plus checkpoint I/O.

Checkpoints are ``.npz`` containers holding one named row-major tensor per
parameter and a ``__header__`` entry with a JSON header (format version,
network configs).  A plain-text manifest listing names and shapes is written
next to the container.
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from ..imaging import InvalidArgument
from . import san as S
from . import tan as T

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict, header: dict):
    header = dict(header, version=CHECKPOINT_VERSION)
    arrays = {k: np.ascontiguousarray(v) for k, v in params.items()}
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with open(str(path) + ".manifest.txt", "w") as fh:
        fh.write(f"# checkpoint version {CHECKPOINT_VERSION}\n")
        fh.write(f"# header {json.dumps(header, sort_keys=True)}\n")
        for k in sorted(params):
            shape = "x".join(str(d) for d in params[k].shape) or "scalar"
            fh.write(f"{k}\t{shape}\t{params[k].dtype}\n")


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise InvalidArgument(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(z["__header__"]))
        params = {k: np.array(z[k]) for k in z.files if k != "__header__"}
    if header.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version {header.get('version')}")
    return params, header


def _cfg_dict(cfg):
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_san(path, params, cfg: S.SanConfig):
    save_checkpoint(path, params, {"kind": "san", "san": _cfg_dict(cfg)})


def save_tan(path, params, cfg: T.TanConfig, san_cfg: S.SanConfig):
    save_checkpoint(path, params, {"kind": "tan", "tan": _cfg_dict(cfg), "san": _cfg_dict(san_cfg)})


def _check_shapes(params, reference, path):
    for k, v in reference.items():
        if k not in params or params[k].shape != v.shape:
            got = params[k].shape if k in params else None
            raise InvalidArgument(f"{path}: parameter {k} has shape {got}, expected {v.shape}")


def load_san(path):
    params, header = load_checkpoint(path)
    if header.get("kind") != "san":
        raise InvalidArgument(f"{path}: expected a spatial-network checkpoint")
    d = header["san"]
    cfg = S.SanConfig(**{**d, "channels": tuple(d["channels"])})
    _check_shapes(params, S.init_san(cfg), path)
    return params, cfg


def load_tan(path):
    params, header = load_checkpoint(path)
    if header.get("kind") != "tan":
        raise InvalidArgument(f"{path}: expected a temporal-network checkpoint")
    cfg = T.TanConfig(**header["tan"])
    _check_shapes(params, T.init_tan(cfg), path)
    return params, cfg


class DmanModel:
    """Spatial + temporal networks evaluated together on image crops."""

    def __init__(self, san_params, san_cfg: S.SanConfig, tan_params, tan_cfg: T.TanConfig):
        if tan_cfg.d_in != san_cfg.d_c:
            raise InvalidArgument(f"temporal input {tan_cfg.d_in} does not match combined feature {san_cfg.d_c}")
        self.san_params, self.san_cfg = san_params, san_cfg
        self.tan_params, self.tan_cfg = tan_params, tan_cfg

    @classmethod
    def load(cls, san_path, tan_path):
        sp, sc = load_san(san_path)
        tp, tc = load_tan(tan_path)
        return cls(sp, sc, tp, tc)

    @property
    def input_size(self):
        return self.san_cfg.input_size

    def embed(self, imgs) -> np.ndarray:
        """``(B, S, S, 3)`` crops -> ``(B, N, C)`` embeddings."""
        return S.embed_batch(imgs, self.san_params, self.san_cfg)

    def affinity_embedded(self, det_X, tracklet_X) -> float:
        """Affinity from a detection embedding ``(N, C)`` and tracklet embeddings ``(T, N, C)``."""
        tracklet_X = np.asarray(tracklet_X)
        if tracklet_X.ndim != 3 or len(tracklet_X) == 0:
            raise InvalidArgument("affinity needs a nonempty tracklet")
        det = np.broadcast_to(det_X, tracklet_X.shape)
        xc = S.san_forward_embedded(tracklet_X, det, self.san_params, self.san_cfg)["x_c"]
        return T.tan_forward(xc, self.tan_params, self.tan_cfg)["similarity"]

    def temporal_weights(self, det_X, tracklet_X) -> np.ndarray:
        det = np.broadcast_to(det_X, np.shape(tracklet_X))
        xc = S.san_forward_embedded(np.asarray(tracklet_X), det, self.san_params, self.san_cfg)["x_c"]
        return T.tan_forward(xc, self.tan_params, self.tan_cfg)["a"]


def affinity(detection_img, tracklet_imgs, model: DmanModel) -> float:
    """Probability that a detection crop and a tracklet of crops share an identity."""
    if len(tracklet_imgs) == 0:
        raise InvalidArgument("affinity needs a nonempty tracklet")
    X = model.embed(np.concatenate([np.asarray(detection_img)[None], np.asarray(tracklet_imgs)]))
    return model.affinity_embedded(X[0], X[1:])
