"""Online multi-target tracking: per-target correlation trackers, a tracked/lost
state machine, motion-gated re-association of lost targets and trajectory
management.

Ablation modes
--------------
``full``  attention-network affinity, cost-sensitive tracker updates
``B1``    affinity = tracker response on the candidate (no networks)
``B2``    spatial attention replaced by uniform pooling
``B3``    temporal attention replaced by average pooling
``B4``    tracker updates without the cost-sensitive loss
"""
from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tracker as sot
from .dman.model import DmanModel
from .imaging import BoundingBox, InvalidArgument, crop_box, iou

log = logging.getLogger(__name__)

TRACKED = "tracked"
LOST = "lost"
MODES = ("full", "B1", "B2", "B3", "B4")


@dataclass
class PipelineConfig:
    tau_s: float = 0.2
    tau_a: float = 0.6
    tau_o: float = 0.5
    tau_d: float = 1.0  # gating radius in predicted-box diagonals
    overlap_window: int = 10  # L
    tracklet_len: int = 8  # T
    gallery_size: int = 100  # M
    frame_rate: float = 30.0  # F
    k_factor: float = 0.3
    init_factor: float = 0.2
    term_factor: float = 2.0
    cover_iou: float = 0.5
    mode: str = "full"
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("tau_s", "tau_a", "tau_o", "tau_d", "frame_rate"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not 1 <= self.tracklet_len <= self.gallery_size:
            raise InvalidArgument("tracklet length must lie in [1, gallery size]")

    @property
    def K(self):
        return max(1, int(round(self.k_factor * self.frame_rate)))

    @property
    def tau_i(self):
        return max(1, int(round(self.init_factor * self.frame_rate)))

    @property
    def tau_t(self):
        return max(1, int(round(self.term_factor * self.frame_rate)))


@dataclass
class GalleryItem:
    frame: int
    crop: np.ndarray
    embedding: np.ndarray | None = None


@dataclass
class TargetTrack:
    id: int
    box: BoundingBox
    tracker: sot.TrackerHandle
    born: int
    state: str = TRACKED
    confirmed: bool = False
    trajectory: dict = field(default_factory=dict)
    gallery: deque = field(default_factory=deque)
    score_history: deque = field(default_factory=lambda: deque(maxlen=32))
    overlap_history: deque = field(default_factory=deque)
    centers: deque = field(default_factory=deque)  # (frame, center) of tracked frames
    lost_duration: int = 0
    pred_center: np.ndarray | None = None

    @property
    def o_mean(self):
        return float(np.mean(self.overlap_history)) if self.overlap_history else 0.0


# --- per-target rules -----------------------------------------------------

def overlap_flag(box: BoundingBox, detections, threshold=0.5) -> int:
    """1 iff some detection overlaps ``box`` with IoU above ``threshold``."""
    return int(any(iou(box, d) > threshold for d in detections))


def update_state(s, o_mean, cfg: PipelineConfig) -> str:
    return TRACKED if (s > cfg.tau_s and o_mean > cfg.tau_o) else LOST


def velocity(centers, K) -> np.ndarray:
    """Mean displacement per frame between the newest center and the one ``K`` entries earlier.

    ``centers`` holds ``(frame, center)`` pairs; with fewer than ``K + 1``
    entries the oldest one is used, with fewer than two the velocity is zero.
    """
    if len(centers) < 2:
        return np.zeros(2)
    f1, c1 = centers[-1]
    f0, c0 = centers[max(0, len(centers) - 1 - K)]
    return (np.asarray(c1, dtype=float) - np.asarray(c0, dtype=float)) / max(f1 - f0, 1)


def predict_location(track: TargetTrack, cfg: PipelineConfig) -> np.ndarray:
    """Next predicted center of a lost target; advances ``track.pred_center``."""
    if track.pred_center is None:
        track.pred_center = np.asarray(track.centers[-1][1], dtype=float) if track.centers else track.box.center
    track.pred_center = track.pred_center + velocity(track.centers, cfg.K)
    return track.pred_center


def predicted_box(track: TargetTrack) -> BoundingBox:
    c = track.pred_center if track.pred_center is not None else track.box.center
    return BoundingBox.from_center(c[0], c[1], track.box.w, track.box.h)


def gate_candidates(track: TargetTrack, detections, tracked_boxes, cfg: PipelineConfig):
    """Indices of detections near the prediction and not covered by a tracked target."""
    pbox = predicted_box(track)
    radius = cfg.tau_d * pbox.diag
    keep = []
    for j, d in enumerate(detections):
        if np.hypot(*(d.center - pbox.center)) >= radius:
            continue
        if any(iou(d, t) > cfg.cover_iou for t in tracked_boxes):
            continue
        keep.append(j)
    return keep


def sample_tracklet(gallery, T):
    """``T`` gallery entries in chronological order, with their 1-based indices.

    With ``G >= T`` entries the picks are ``round(1 + (i - 1)(G - 1)/(T - 1))``.
    A shorter gallery is used whole, entry ``ceil(i G / T)`` at position ``i``,
    so repeats are spread evenly and favour the most recent entries.
    """
    G = len(gallery)
    if G == 0:
        raise InvalidArgument("cannot sample a tracklet from an empty gallery")
    if T == 1:
        idx = [1]
    elif G < T:
        idx = [-(-i * G // T) for i in range(1, T + 1)]
    else:
        # round half up, as the rule is stated on positive reals
        idx = [int(np.floor(1 + (i - 1) * (G - 1) / (T - 1) + 0.5)) for i in range(1, T + 1)]
    items = list(gallery)
    return [items[i - 1] for i in idx], idx


def associate(affinities, cfg: PipelineConfig, track_ids=None):
    """Greedy one-to-one assignment over an affinity matrix (tracks x detections).

    Pairs are taken in decreasing affinity while the affinity is at least
    ``tau_a``; ties go to the lower track id, then the lower detection index.
    Missing (ungated) pairs are ``nan``.
    """
    A = np.asarray(affinities, dtype=float)
    if A.size == 0:
        return []
    n_t, n_d = A.shape
    ids = list(range(n_t)) if track_ids is None else list(track_ids)
    cand = [(-A[t, d], ids[t], d, t) for t in range(n_t) for d in range(n_d)
            if np.isfinite(A[t, d]) and A[t, d] >= cfg.tau_a]
    cand.sort()
    used_t, used_d, pairs = set(), set(), []
    for _, _, d, t in cand:
        if t in used_t or d in used_d:
            continue
        used_t.add(t)
        used_d.add(d)
        pairs.append((t, d))
    return pairs


def apply_mode(mode, tracker_cfg: sot.TrackerConfig, model: DmanModel | None):
    """Tracker config and model adjusted for an ablation mode."""
    if mode == "B4":
        tracker_cfg = replace(tracker_cfg, cost_sensitive=False)
    if model is not None and mode == "B2":
        model = DmanModel(model.san_params, replace(model.san_cfg, uniform_attention=True),
                          model.tan_params, model.tan_cfg)
    if model is not None and mode == "B3":
        model = DmanModel(model.san_params, model.san_cfg,
                          model.tan_params, replace(model.tan_cfg, average_pooling=True))
    return tracker_cfg, model


class Pipeline:
    """Frame-by-frame online tracker; call :meth:`step` with increasing frame indices."""

    def __init__(self, cfg: PipelineConfig | None = None, tracker_cfg: sot.TrackerConfig | None = None,
                 model: DmanModel | None = None, frame_size=None):
        self.cfg = cfg or PipelineConfig()
        if self.cfg.mode != "B1" and model is None:
            raise InvalidArgument(f"mode {self.cfg.mode} needs a trained affinity model")
        self.tracker_cfg, self.model = apply_mode(self.cfg.mode, tracker_cfg or sot.TrackerConfig(), model)
        self.tracks: list[TargetTrack] = []
        self.finished: list[TargetTrack] = []
        self.next_id = 1
        self.last_frame = 0
        self.frame_size = frame_size
        self._pool = ThreadPoolExecutor(self.cfg.threads) if self.cfg.threads > 1 else None

    # -- helpers ------------------------------------------------------------

    def _crop(self, frame, box):
        s = self.model.input_size if self.model is not None else 64
        return crop_box(frame, box, (s, s))

    def _embedding(self, item: GalleryItem):
        if item.embedding is None:
            item.embedding = self.model.embed(item.crop[None])[0]
        return item.embedding

    def _affinity(self, track, frame, det, det_emb):
        if self.cfg.mode == "B1":
            return sot.score_candidate(track.tracker, frame, det)
        items, _ = sample_tracklet(track.gallery, self.cfg.tracklet_len)
        X = np.stack([self._embedding(it) for it in items])
        return self.model.affinity_embedded(det_emb, X)

    def _out_of_view(self, box):
        if self.frame_size is None:
            return False
        W, H = self.frame_size
        cx, cy = box.center
        return not (0 <= cx < W and 0 <= cy < H)

    def _record(self, track, k, frame, box):
        track.box = box
        track.trajectory[k] = box
        track.centers.append((k, box.center))
        while len(track.centers) > self.cfg.K + 1:
            track.centers.popleft()
        track.pred_center = None
        if self.cfg.mode != "B1":
            track.gallery.append(GalleryItem(k, self._crop(frame, box)))
            while len(track.gallery) > self.cfg.gallery_size:
                track.gallery.popleft()

    def _push_overlap(self, track, flag):
        track.overlap_history.append(flag)
        while len(track.overlap_history) > self.cfg.overlap_window:
            track.overlap_history.popleft()

    def _track_one(self, track, frame):
        box, s = sot.track(track.tracker, frame)
        return box, s

    # -- main loop ----------------------------------------------------------

    def step(self, k, frame, detections):
        """Process frame ``k``; returns ``[(id, box)]`` of confirmed tracked targets."""
        if k <= self.last_frame:
            raise InvalidArgument(f"frame {k} does not follow frame {self.last_frame}")
        self.last_frame = k
        frame = np.asarray(frame, dtype=np.float64)
        if self.frame_size is None:
            self.frame_size = (frame.shape[1], frame.shape[0])
        dets = [d.box if hasattr(d, "box") else d for d in detections]
        cfg = self.cfg

        # (1) single-object tracking of tracked targets
        active = [t for t in self.tracks if t.state == TRACKED]
        if self._pool is not None and len(active) > 1:
            outs = list(self._pool.map(lambda t: self._track_one(t, frame), active))
        else:
            outs = [self._track_one(t, frame) for t in active]
        for t, (box, s) in zip(active, outs):
            t.score_history.append(s)
            self._push_overlap(t, overlap_flag(box, dets, cfg.cover_iou))
            t.state = update_state(s, t.o_mean, cfg)
            if t.state == TRACKED:
                self._record(t, k, frame, box)
            else:
                t.lost_duration = 0
                log.debug("frame %d: track %d lost (score %.3f, overlap %.2f)", k, t.id, s, t.o_mean)
        updating = [t for t in active if t.state == TRACKED]
        if self._pool is not None and len(updating) > 1:
            list(self._pool.map(lambda t: sot.update_model(t.tracker, frame), updating))
        else:
            for t in updating:
                sot.update_model(t.tracker, frame)

        # (2) re-association of lost targets
        lost = [t for t in self.tracks if t.state == LOST]
        for t in lost:
            predict_location(t, cfg)
        tracked_boxes = [t.box for t in self.tracks if t.state == TRACKED]
        used = set()
        if lost and dets:
            A = np.full((len(lost), len(dets)), np.nan)
            det_emb = {}
            for i, t in enumerate(lost):
                if not t.confirmed or (cfg.mode != "B1" and not t.gallery):
                    continue
                for j in gate_candidates(t, dets, tracked_boxes, cfg):
                    if cfg.mode != "B1" and j not in det_emb:
                        det_emb[j] = self.model.embed(self._crop(frame, dets[j])[None])[0]
                    A[i, j] = self._affinity(t, frame, dets[j], det_emb.get(j))
            for i, j in associate(A, cfg, [t.id for t in lost]):
                t = lost[i]
                t.tracker = sot.init_tracker(frame, dets[j], self.tracker_cfg)
                t.state = TRACKED
                t.lost_duration = 0
                t.overlap_history.clear()
                self._push_overlap(t, 1)
                self._record(t, k, frame, dets[j])
                used.add(j)
                log.debug("frame %d: restored track %d (affinity %.3f)", k, t.id, A[i, j])

        # (3) trajectory management
        survivors = []
        for t in self.tracks:
            if t.state == LOST and k not in t.trajectory:
                t.lost_duration += 1
            if not t.confirmed:
                covered = t.state == TRACKED and t.overlap_history and t.overlap_history[-1] == 1
                if not covered:
                    continue  # discarded before confirmation
                if k - t.born + 1 >= cfg.tau_i:
                    t.confirmed = True
            box = t.box if t.state == TRACKED else predicted_box(t)
            if (t.state == LOST and t.lost_duration > cfg.tau_t) or self._out_of_view(box):
                self.finished.append(t)
                continue
            survivors.append(t)
        self.tracks = survivors

        # (4) new targets from uncovered detections
        tracked_boxes = [t.box for t in self.tracks if t.state == TRACKED]
        for j, d in enumerate(dets):
            if j in used or any(iou(d, b) > cfg.cover_iou for b in tracked_boxes):
                continue
            t = TargetTrack(self.next_id, d, sot.init_tracker(frame, d, self.tracker_cfg), born=k)
            self.next_id += 1
            self._push_overlap(t, 1)
            self._record(t, k, frame, d)
            if cfg.tau_i <= 1:
                t.confirmed = True
            self.tracks.append(t)
            tracked_boxes.append(d)

        return [(t.id, t.box) for t in self.tracks if t.state == TRACKED and t.confirmed and k in t.trajectory]

    def results(self):
        """``(frame, id, box)`` rows of every confirmed trajectory, sorted by frame then id."""
        rows = []
        for t in self.finished + self.tracks:
            if t.confirmed:
                rows.extend((f, t.id, b) for f, b in t.trajectory.items())
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def run_sequence(frames, detections_by_frame, n_frames, cfg=None, tracker_cfg=None, model=None,
                 progress=None):
    """Run the pipeline over frames ``1..n_frames``; ``frames(k)`` returns an image."""
    pipe = Pipeline(cfg, tracker_cfg, model)
    try:
        for k in range(1, n_frames + 1):
            pipe.step(k, frames(k), detections_by_frame.get(k, []))
            if progress is not None:
                progress(k)
    finally:
        pipe.close()
    return pipe.results()
