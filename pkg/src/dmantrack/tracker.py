"""Single-object correlation-filter tracker with the cost-sensitive model update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import resample

from . import filter_core as fc
from .features import FeatureConfig, assemble_features
from .imaging import BoundingBox, InvalidArgument, extract_patch


@dataclass
class TrackerConfig:
    search_scale: float = 2.0
    scales: tuple = (0.98, 1.0, 1.02)
    scale_penalty: float = 0.9  # response multiplier for off-unity scale steps
    min_sample_area: float = 48.0 * 48.0
    max_sample_area: float = 96.0 * 96.0
    memory_size: int = 30
    learning_rate: float = 0.0125
    w_min: float = 1e-3
    eta: float = 10.0
    cg_init_iter: int = 100
    cg_update_iter: int = 5
    cg_tol: float = 1e-5
    cost_sensitive: bool = True
    upsample: int = 1  # trigonometric interpolation factor of the confidence map
    features: FeatureConfig = field(default_factory=FeatureConfig)


@dataclass
class TrackerHandle:
    box: BoundingBox
    base_size: np.ndarray  # target (w, h) in pixels at scale 1
    scale: float
    resample: float  # frame pixels per model pixel at scale 1
    sample_px: tuple  # model-space patch (w, h), multiple of the cell size
    label: np.ndarray
    window: np.ndarray
    memory: fc.SampleMemory
    f_hat: np.ndarray
    f_prev: np.ndarray | None
    score: float
    config: TrackerConfig
    last_response: np.ndarray | None = None

    @property
    def grid(self):
        return self.label.shape

    @property
    def cell(self):
        return min(self.config.features.hog_cell, self.config.features.cn_cell)


def _sample(handle_like, frame, center, scale):
    """Features of the search window around ``center`` (geometric pixel coords)."""
    cfg = handle_like.config
    size = np.asarray(handle_like.sample_px, dtype=float) * handle_like.resample * scale
    patch = extract_patch(frame, np.asarray(center) - 0.5, size, handle_like.sample_px)
    return assemble_features(patch, cfg.features)


def _peak_offset(resp, i, j):
    """Parabolic sub-cell refinement around the integer peak (periodic)."""
    n1, n2 = resp.shape

    def vertex(lo, c, hi):
        den = lo - 2.0 * c + hi
        if den >= 0:
            return 0.0
        return float(np.clip(0.5 * (lo - hi) / den, -0.5, 0.5))

    di = vertex(resp[(i - 1) % n1, j], resp[i, j], resp[(i + 1) % n1, j])
    dj = vertex(resp[i, (j - 1) % n2], resp[i, j], resp[i, (j + 1) % n2])
    return di, dj


def _upsample(resp, factor):
    """Band-limited interpolation of a periodic map; grid samples are kept."""
    if factor <= 1:
        return resp
    n1, n2 = resp.shape
    return resample(resample(resp, n1 * factor, axis=0), n2 * factor, axis=1)


def _wrap(d, n):
    return (d + n / 2.0) % n - n / 2.0


def _solve(handle, cg_iter, q=None, warm=None):
    system = fc.NormalSystem.from_memory(
        handle.memory, handle.window, q=q, cost_sensitive=handle.config.cost_sensitive
    )
    return fc.solve_filter(system, max_iter=cg_iter, tol=handle.config.cg_tol, warm_start=warm), system


def init_tracker(frame, box: BoundingBox, config: TrackerConfig | None = None) -> TrackerHandle:
    config = config or TrackerConfig()
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    if not (box.w >= 1 and box.h >= 1):
        raise InvalidArgument(f"degenerate box {box}")
    H, W = frame.shape[:2]
    cx, cy = box.center
    if not (-box.w < cx < W + box.w and -box.h < cy < H + box.h):
        raise InvalidArgument(f"box {box} lies outside the {W}x{H} frame")

    cell = min(config.features.hog_cell, config.features.cn_cell)
    search = np.array([box.w, box.h]) * config.search_scale
    area = search[0] * search[1]
    resample = 1.0
    if area > config.max_sample_area:
        resample = np.sqrt(area / config.max_sample_area)
    elif area < config.min_sample_area:
        resample = np.sqrt(area / config.min_sample_area)
    sample_px = tuple(int(max(2, round(s / resample / cell))) * cell for s in search)
    grid = (sample_px[1] // cell, sample_px[0] // cell)
    target_cells = (box.h / resample / cell, box.w / resample / cell)
    label = fc.gaussian_label(grid, fc.label_sigma(target_cells))
    window = fc.regularization_window(grid, target_cells, config.w_min, config.eta)

    handle = TrackerHandle(
        box=box, base_size=np.array([box.w, box.h], dtype=float), scale=1.0, resample=resample,
        sample_px=sample_px, label=label, window=window,
        memory=fc.SampleMemory(config.memory_size, config.learning_rate),
        f_hat=np.zeros((0,)), f_prev=None, score=0.0, config=config,
    )
    x = _sample(handle, frame, box.center, 1.0)
    handle.memory.add(x, label)
    res, _ = _solve(handle, config.cg_init_iter)
    handle.f_hat = res.f_hat
    if config.cost_sensitive:
        _refine(handle, config.cg_update_iter)
    response = fc.apply_filter(handle.f_hat, x)
    handle.score = float(response.max())
    handle.last_response = response
    return handle


def _refine(handle, cg_iter):
    f_prev = handle.f_hat
    q = None
    if handle.config.cost_sensitive:
        q = fc.modulating_factors(f_prev, np.stack(handle.memory.x_hat), np.stack(handle.memory.labels))
    res, _ = _solve(handle, cg_iter, q=q, warm=f_prev)
    handle.f_prev = f_prev
    handle.f_hat = res.f_hat


def response_at(handle: TrackerHandle, frame, center, scale) -> np.ndarray:
    x = _sample(handle, frame, center, scale)
    return fc.apply_filter(handle.f_hat, x)


def track(handle: TrackerHandle, frame):
    """Locate the target in ``frame``; returns ``(box, score)`` and updates the handle."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    H, W = frame.shape[:2]
    if W < handle.sample_px[0] or H < handle.sample_px[1]:
        raise InvalidArgument(f"frame {W}x{H} smaller than the {handle.sample_px} sample patch")

    center = handle.box.center
    best = None
    for sf in handle.config.scales:
        scale = handle.scale * sf
        resp = _upsample(response_at(handle, frame, center, scale), handle.config.upsample)
        peak = float(resp.max())
        ranked = peak if sf == 1.0 else peak * handle.config.scale_penalty
        if best is None or ranked > best[0]:
            best = (ranked, peak, scale, resp)
    _, score, scale, resp = best
    i, j = np.unravel_index(int(np.argmax(resp)), resp.shape)
    di, dj = _peak_offset(resp, i, j)
    u = max(1, handle.config.upsample)
    n1, n2 = resp.shape
    c1, c2 = (n1 // u // 2) * u, (n2 // u // 2) * u
    step = handle.cell * handle.resample * scale / u
    dy = _wrap(i + di - c1, n1) * step
    dx = _wrap(j + dj - c2, n2) * step
    new_center = center + np.array([dx, dy])
    size = handle.base_size * scale
    handle.box = BoundingBox.from_center(new_center[0], new_center[1], size[0], size[1])
    handle.scale = scale
    handle.score = score
    handle.last_response = resp
    return handle.box, score


def update_model(handle: TrackerHandle, frame):
    """Add the current target sample and refine the filter (warm-started CG)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    x = _sample(handle, frame, handle.box.center, handle.scale)
    handle.memory.add(x, handle.label)
    _refine(handle, handle.config.cg_update_iter)


def score_candidate(handle: TrackerHandle, frame, box: BoundingBox) -> float:
    """Maximum filter response on a candidate detection (tracker-score affinity)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    scale = float(np.sqrt(box.w * box.h / (handle.base_size[0] * handle.base_size[1])))
    resp = response_at(handle, frame, box.center, scale)
    return float(_upsample(resp, handle.config.upsample).max())


def with_cost_sensitive(config: TrackerConfig, enabled: bool) -> TrackerConfig:
    return replace(config, cost_sensitive=enabled)
