"""Synthetic identity crops and the pair / tracklet samplers used for training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import BoundingBox, InvalidArgument, crop_box
from ..synthetic import background, identity_texture, render_identity


@dataclass
class CropStyle:
    """Augmentation ranges mimicking detector crops taken by the tracking pipeline."""

    box_w: float = 24.0
    box_h: float = 48.0
    shift: float = 0.1  # uniform box shift, fraction of the box size
    log_scale: float = 0.08  # std of the log box rescale
    occluder_prob: float = 0.3
    occluder_offset: tuple = (0.45, 0.9)  # horizontal occluder offset, fraction of box width


class IdentityDataset:
    """Identities given by texture seeds; crops are rendered on demand."""

    def __init__(self, seeds, input_size=64, style: CropStyle | None = None):
        self.seeds = list(seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidArgument("identity seeds must be distinct")
        self.input_size = input_size
        self.style = style or CropStyle()
        self.textures = [identity_texture(s) for s in self.seeds]

    def __len__(self):
        return len(self.seeds)

    def crop(self, k, rng) -> np.ndarray:
        """One augmented ``(S, S, 3)`` crop of identity index ``k``."""
        st = self.style
        W, H = int(3 * st.box_w), int(2 * st.box_h)
        canvas = background(W, H, int(rng.integers(1 << 30)))
        box = BoundingBox.from_center(W / 2, H / 2, st.box_w, st.box_h)
        render_identity(canvas, box, self.textures[k])
        if len(self) > 1 and rng.random() < st.occluder_prob:
            other = (k + 1 + int(rng.integers(len(self) - 1))) % len(self)
            off = rng.uniform(*st.occluder_offset) * st.box_w * rng.choice([-1.0, 1.0])
            occ = BoundingBox.from_center(W / 2 + off, H / 2 + rng.uniform(-0.1, 0.1) * st.box_h, st.box_w, st.box_h)
            render_identity(canvas, occ, self.textures[other])
        dx, dy = rng.uniform(-st.shift, st.shift, 2) * (st.box_w, st.box_h)
        s = np.exp(rng.normal(0.0, st.log_scale))
        view = BoundingBox.from_center(W / 2 + dx, H / 2 + dy, st.box_w * s, st.box_h * s)
        return crop_box(canvas, view, (self.input_size, self.input_size))

    def crops(self, ks, rng) -> np.ndarray:
        return np.stack([self.crop(int(k), rng) for k in ks])


def sample_identities(n_ids, count, rng) -> np.ndarray:
    """Identity indices drawn with equal probability."""
    return rng.integers(n_ids, size=count)


@dataclass
class PairBatch:
    imgs_a: np.ndarray
    imgs_b: np.ndarray
    ids_a: np.ndarray
    ids_b: np.ndarray
    same: np.ndarray


@dataclass
class TrackletBatch:
    tracklets: np.ndarray  # (B, T, S, S, 3)
    detections: np.ndarray  # (B, S, S, 3)
    labels: np.ndarray  # 1 if the detection shares the tracklet identity
    foreign: list  # per tracklet, positions of injected foreign samples


def _require_negatives(dataset):
    if len(dataset) < 2:
        raise InvalidArgument("at least two identities are needed to form negative pairs")


def make_pairs(dataset: IdentityDataset, n, rng, pos_ratio=0.5) -> PairBatch:
    """``round(pos_ratio * n)`` positive pairs, the rest negative, shuffled."""
    _require_negatives(dataset)
    n_pos = int(round(pos_ratio * n))
    ids_a = sample_identities(len(dataset), n, rng)
    same = np.zeros(n)
    same[:n_pos] = 1.0
    rng.shuffle(same)
    shift = rng.integers(1, len(dataset), size=n)
    ids_b = np.where(same > 0, ids_a, (ids_a + shift) % len(dataset))
    return PairBatch(dataset.crops(ids_a, rng), dataset.crops(ids_b, rng), ids_a, ids_b, same)


def make_tracklets(dataset: IdentityDataset, n, T, rng, pos_ratio=0.5, corrupt_prob=0.5,
                   hard_negative_prob=0.5) -> TrackletBatch:
    """Tracklets of one identity, optionally with 1 or 2 foreign samples injected.

    With probability ``hard_negative_prob`` a negative detection of a corrupted
    tracklet is taken from the injected identity, so that matching any single
    sample is not enough to call the pair positive.
    """
    _require_negatives(dataset)
    n_pos = int(round(pos_ratio * n))
    labels = np.zeros(n)
    labels[:n_pos] = 1.0
    rng.shuffle(labels)
    owners = sample_identities(len(dataset), n, rng)
    tracks, dets, foreign = [], [], []
    for b in range(n):
        k = int(owners[b])
        ids = np.full(T, k)
        pos = []
        if T > 1 and rng.random() < corrupt_prob:
            n_bad = int(rng.integers(1, min(2, T - 1) + 1))
            pos = sorted(int(p) for p in rng.choice(T, n_bad, replace=False))
            ids[pos] = (k + rng.integers(1, len(dataset), size=n_bad)) % len(dataset)
        if labels[b]:
            det_id = k
        elif pos and rng.random() < hard_negative_prob:
            det_id = int(ids[pos[0]])
        else:
            det_id = (k + int(rng.integers(1, len(dataset)))) % len(dataset)
        tracks.append(dataset.crops(ids, rng))
        dets.append(dataset.crop(det_id, rng))
        foreign.append(pos)
    return TrackletBatch(np.stack(tracks), np.stack(dets), labels, foreign)


def make_training_data(dataset: IdentityDataset, n_pairs, n_tracklets, T=8, seed=0, pos_ratio=0.5):
    """Pairs for the spatial network and tracklets for the temporal network."""
    rng = np.random.default_rng(seed)
    return make_pairs(dataset, n_pairs, rng, pos_ratio), make_tracklets(dataset, n_tracklets, T, rng, pos_ratio)
