"""HOG and Color Names features for the correlation-filter tracker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import InvalidArgument, resize, to_rgb

COLOR_NAMES = (
    "black", "blue", "brown", "grey", "green", "orange",
    "pink", "purple", "red", "white", "yellow",
)

# Prototype RGB values used to synthesize the built-in lookup table.
_PROTOTYPES = np.array([
    [0.00, 0.00, 0.00],
    [0.05, 0.15, 0.85],
    [0.50, 0.30, 0.10],
    [0.50, 0.50, 0.50],
    [0.10, 0.65, 0.15],
    [1.00, 0.55, 0.00],
    [1.00, 0.60, 0.75],
    [0.50, 0.05, 0.55],
    [1.00, 0.00, 0.00],
    [1.00, 1.00, 1.00],
    [1.00, 1.00, 0.00],
])

HOG_CLIP = 0.2
_NORM_EPS = 1e-10


@dataclass
class FeatureStack:
    """Multi-channel feature grid, ``data`` has shape ``(D, N1, N2)``."""

    data: np.ndarray
    cell_size: int
    meta: dict = field(default_factory=dict)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def grid(self):
        return self.data.shape[1:]


class ColorNameTable:
    """Lookup from 32x32x32 quantized RGB to 11 color-name probabilities."""

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (32768, 11):
            raise InvalidArgument(f"color-name table must be 32768x11, got {probs.shape}")
        if probs.min() < 0 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
            raise InvalidArgument("color-name table rows must be probability vectors")
        self.probs = probs

    @classmethod
    def load(cls, path):
        raw = np.loadtxt(path, ndmin=2)
        # w2c-style files carry the RGB bin centers in the first three columns
        if raw.shape[1] == 14:
            raw = raw[:, 3:]
        return cls(raw)

    def save(self, path):
        np.savetxt(path, self.probs, fmt="%.8f")

    @staticmethod
    def index(rgb):
        q = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(int) // 8
        return q[..., 0] + 32 * q[..., 1] + 1024 * q[..., 2]

    def lookup(self, rgb):
        return self.probs[self.index(rgb)]


def prototype_color_table(sharpness=0.02) -> ColorNameTable:
    """Soft nearest-prototype table over the 11 basic color terms."""
    q = (np.arange(32) * 8 + 4) / 255.0
    b, g, r = np.meshgrid(q, q, q, indexing="ij")
    rgb = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)
    d2 = ((rgb[:, None, :] - _PROTOTYPES[None]) ** 2).sum(axis=2)
    logits = -d2 / sharpness
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return ColorNameTable(p / p.sum(axis=1, keepdims=True))


def _cell_sum(arr, cell):
    H, W = arr.shape[:2]
    return arr.reshape(H // cell, cell, W // cell, cell, -1).sum(axis=(1, 3))


def _tent(n, cell):
    """``(n // cell, n)`` bilinear weights of pixel centers onto cell centers."""
    pix = (np.arange(n) + 0.5) / cell - 0.5
    return np.maximum(0.0, 1.0 - np.abs(pix[None, :] - np.arange(n // cell)[:, None]))


def _cell_pool(arr, cell, soft):
    """Per-cell mean of ``arr (H, W, K)``; ``soft`` spreads pixels over neighbor cells."""
    if not soft or cell == 1:
        return _cell_sum(arr, cell) / (cell * cell)
    H, W = arr.shape[:2]
    ay, ax = _tent(H, cell), _tent(W, cell)
    ay /= ay.sum(axis=1, keepdims=True)
    ax /= ax.sum(axis=1, keepdims=True)
    return np.einsum("ch,hwk,dw->cdk", ay, arr, ax, optimize=True)


def _check_cells(img, cell):
    H, W = img.shape[:2]
    if cell < 1 or H < cell or W < cell:
        raise InvalidArgument(f"image {W}x{H} smaller than one {cell}px cell")
    if H % cell or W % cell:
        raise InvalidArgument(f"image {W}x{H} not divisible by cell size {cell}")


def hog(img, cell=4, nbins=9, soft=True) -> FeatureStack:
    """Unsigned-orientation cell histograms, L2-normalized and clipped."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    _check_cells(img, cell)

    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    mag = np.hypot(dx, dy)
    # dominant channel per pixel
    k = np.argmax(mag, axis=2)[:, :, None]
    mag = np.take_along_axis(mag, k, 2)[:, :, 0]
    dx = np.take_along_axis(dx, k, 2)[:, :, 0]
    dy = np.take_along_axis(dy, k, 2)[:, :, 0]

    theta = np.mod(np.arctan2(dy, dx), np.pi)
    pos = theta / (np.pi / nbins)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(int) % nbins
    hi = (lo + 1) % nbins

    H, W = mag.shape
    votes = np.zeros((H, W, nbins))
    rows, cols = np.indices((H, W))
    # lo != hi, so plain fancy-index writes do not collide
    votes[rows, cols, lo] = mag * (1 - frac)
    votes[rows, cols, hi] += mag * frac
    hist = _cell_pool(votes, cell, soft)

    hist = _normalize(hist)
    hist = _normalize(np.minimum(hist, HOG_CLIP))
    return FeatureStack(np.moveaxis(hist, 2, 0), cell)


def _normalize(hist):
    norm = np.sqrt((hist ** 2).sum(axis=2, keepdims=True))
    out = np.zeros_like(hist)
    np.divide(hist, norm, out=out, where=norm > _NORM_EPS)
    return out


def color_names(img, table: ColorNameTable | None, cell=4, soft=True) -> FeatureStack:
    """Per-cell averaged color-name probabilities (or mean RGB without a table)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    _check_cells(img, cell)
    rgb = to_rgb(img)
    if table is None:
        probs = rgb
        meta = {"cn_fallback": True}
    else:
        probs = table.lookup(rgb)
        meta = {"cn_fallback": False}
    cells = _cell_pool(probs, cell, soft)
    return FeatureStack(np.moveaxis(cells, 2, 0), cell, meta)


@dataclass
class FeatureConfig:
    hog_cell: int = 4
    cn_cell: int = 4
    nbins: int = 9
    table: ColorNameTable | None = None
    soft_cells: bool = True  # bilinear pixel-to-cell assignment


def hann2d(n1, n2) -> np.ndarray:
    return np.outer(np.hanning(n1), np.hanning(n2))


def _resample(stack: FeatureStack, grid) -> np.ndarray:
    if tuple(stack.grid) == tuple(grid):
        return stack.data
    n1, n2 = grid
    out = resize(np.moveaxis(stack.data, 0, 2), (n2, n1))
    return np.moveaxis(out, 2, 0)


def assemble_features(patch, config: FeatureConfig) -> FeatureStack:
    """HOG + Color Names stacked on a common grid and Hann-windowed."""
    h = hog(patch, config.hog_cell, config.nbins, config.soft_cells)
    cn = color_names(patch, config.table, config.cn_cell, config.soft_cells)
    grid = max(h.grid, cn.grid, key=lambda g: g[0] * g[1])
    data = np.concatenate([_resample(h, grid), _resample(cn, grid)], axis=0)
    data = data * hann2d(*grid)[None]
    cell = min(config.hog_cell, config.cn_cell)
    return FeatureStack(data, cell, dict(cn.meta))
