"""Synthetic multi-target sequences: textured rectangles on piecewise-linear paths."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .imaging import BoundingBox, InvalidArgument, write_pnm
from .mot_io import FrameRecord, write_records

TEXTURE_GRID = (6, 3)  # texture blocks (rows, cols) per identity


@dataclass
class IdentitySpec:
    id: int
    w: float
    h: float
    waypoints: list  # [(frame, cx, cy), ...], frames ascending
    appearance_seed: int = 0
    z: int = 0

    @property
    def start(self):
        return int(self.waypoints[0][0])

    @property
    def end(self):
        return int(self.waypoints[-1][0])

    def center(self, frame):
        f = np.array([p[0] for p in self.waypoints], dtype=float)
        cx = np.interp(frame, f, [p[1] for p in self.waypoints])
        cy = np.interp(frame, f, [p[2] for p in self.waypoints])
        return cx, cy

    def box(self, frame):
        cx, cy = self.center(frame)
        return BoundingBox.from_center(cx, cy, self.w, self.h)


@dataclass
class SyntheticScenario:
    n_frames: int
    width: int
    height: int
    identities: list
    frame_rate: float = 30.0
    jitter: float = 0.0  # detection jitter, fraction of box size (std)
    miss_rate: float = 0.0
    fp_rate: float = 0.0  # probability of one false positive per frame
    det_min_visibility: float = 0.5
    background_seed: int = 0
    occlusions: list = field(default_factory=list)  # [(id, first, last)] forced invisibility

    def validate(self):
        for r in (self.miss_rate, self.fp_rate, self.det_min_visibility):
            if not 0.0 <= r <= 1.0:
                raise InvalidArgument(f"rate {r} outside [0, 1]")
        for ident in self.identities:
            for k in range(ident.start, ident.end + 1):
                b = ident.box(k)
                if b.x < 0 or b.y < 0 or b.x + b.w > self.width or b.y + b.h > self.height:
                    raise InvalidArgument(f"identity {ident.id} leaves the frame at frame {k}")
            if ident.start < 1 or ident.end > self.n_frames:
                raise InvalidArgument(f"identity {ident.id} path outside frame range")


def identity_texture(seed, grid=TEXTURE_GRID):
    """Blocky two-tone color texture; deterministic in ``seed``."""
    rng = np.random.default_rng(seed + 1000003)
    hue = rng.random()
    base = _hsv_to_rgb(hue, 0.55 + 0.4 * rng.random(), 0.55 + 0.4 * rng.random())
    second = _hsv_to_rgb((hue + 0.3 + 0.4 * rng.random()) % 1.0, 0.3 + 0.6 * rng.random(), 0.3 + 0.6 * rng.random())
    mask = rng.random(grid) < 0.4
    shade = 0.8 + 0.2 * rng.random(grid)
    tex = np.where(mask[..., None], second, base) * shade[..., None]
    return np.clip(tex, 0.0, 1.0)


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def render_identity(canvas, box: BoundingBox, texture, mask=None):
    """Paint ``texture`` over ``box`` (nearest-block lookup in box coordinates)."""
    H, W = canvas.shape[:2]
    x0, x1 = int(np.floor(box.x)), int(np.ceil(box.x + box.w))
    y0, y1 = int(np.floor(box.y)), int(np.ceil(box.y + box.h))
    x0c, x1c, y0c, y1c = max(x0, 0), min(x1, W), max(y0, 0), min(y1, H)
    if x0c >= x1c or y0c >= y1c:
        return
    xs = np.arange(x0c, x1c) + 0.5
    ys = np.arange(y0c, y1c) + 0.5
    u = (xs - box.x) / box.w
    v = (ys - box.y) / box.h
    inside_x = (u >= 0) & (u < 1)
    inside_y = (v >= 0) & (v < 1)
    gr, gc = texture.shape[:2]
    ci = np.clip((u * gc).astype(int), 0, gc - 1)
    ri = np.clip((v * gr).astype(int), 0, gr - 1)
    patch = texture[ri][:, ci]
    sel = inside_y[:, None] & inside_x[None, :]
    region = canvas[y0c:y1c, x0c:x1c]
    region[sel] = patch[sel]
    if mask is not None:
        mask[y0c:y1c, x0c:x1c][sel] = True


def background(width, height, seed):
    rng = np.random.default_rng(seed + 7919)
    coarse = rng.random((max(2, height // 16), max(2, width // 16)))
    rows = np.minimum((np.arange(height) * coarse.shape[0]) // height, coarse.shape[0] - 1)
    cols = np.minimum((np.arange(width) * coarse.shape[1]) // width, coarse.shape[1] - 1)
    shade = 0.45 + 0.1 * coarse[rows][:, cols]
    return np.repeat(shade[:, :, None], 3, axis=2)


class SyntheticSequence:
    """Rendered scenario: frames on demand, ground truth and detections."""

    def __init__(self, scenario: SyntheticScenario, seed: int):
        scenario.validate()
        self.scenario = scenario
        self.seed = seed
        self.textures = {i.id: identity_texture(i.appearance_seed) for i in scenario.identities}
        self._bg = background(scenario.width, scenario.height, scenario.background_seed)
        self.gt = self._ground_truth()
        self.detections = self._detections()

    def _visible(self, frame):
        scn = self.scenario
        present = [i for i in scn.identities if i.start <= frame <= i.end]
        order = sorted(present, key=lambda i: (i.z, i.id))
        return order

    def frame(self, k) -> np.ndarray:
        canvas = self._bg.copy()
        for ident in self._visible(k):
            if self._forced_hidden(ident.id, k):
                continue
            render_identity(canvas, ident.box(k), self.textures[ident.id])
        return canvas

    def _forced_hidden(self, tid, k):
        return any(o[0] == tid and o[1] <= k <= o[2] for o in self.scenario.occlusions)

    def _ground_truth(self):
        scn = self.scenario
        rows = []
        for k in range(1, scn.n_frames + 1):
            order = self._visible(k)
            for idx, ident in enumerate(order):
                box = ident.box(k)
                if self._forced_hidden(ident.id, k):
                    vis = 0.0
                else:
                    vis = _visibility(box, [o.box(k) for o in order[idx + 1:] if not self._forced_hidden(o.id, k)],
                                      scn.width, scn.height)
                flag = 1.0 if vis >= 0.5 else 0.0
                rows.append(FrameRecord(k, ident.id, box, flag, (1.0, round(vis, 6), -1.0)))
        rows.sort(key=lambda r: (r.frame, r.id))
        return rows

    def _detections(self):
        scn = self.scenario
        rng = np.random.default_rng(self.seed)
        dets = []
        by_frame = {}
        for r in self.gt:
            by_frame.setdefault(r.frame, []).append(r)
        for k in range(1, scn.n_frames + 1):
            for r in by_frame.get(k, []):
                if r.visibility < scn.det_min_visibility:
                    continue
                if scn.miss_rate > 0 and rng.random() < scn.miss_rate:
                    continue
                b = r.box
                if scn.jitter > 0:
                    dx, dy, dw, dh = rng.normal(0.0, scn.jitter, 4)
                    b = BoundingBox(b.x + dx * b.w, b.y + dy * b.h, b.w * np.exp(dw), b.h * np.exp(dh))
                dets.append(FrameRecord(k, -1, b, 1.0))
            if scn.fp_rate > 0 and rng.random() < scn.fp_rate:
                ident = scn.identities[rng.integers(len(scn.identities))]
                w, h = ident.w, ident.h
                x = rng.uniform(0, scn.width - w)
                y = rng.uniform(0, scn.height - h)
                dets.append(FrameRecord(k, -1, BoundingBox(x, y, w, h), 1.0))
        return dets

    def write(self, out_dir):
        os.makedirs(os.path.join(out_dir, "img1"), exist_ok=True)
        for k in range(1, self.scenario.n_frames + 1):
            write_pnm(os.path.join(out_dir, "img1", f"{k:06d}.ppm"), self.frame(k))
        write_records(self.gt, os.path.join(out_dir, "gt.txt"))
        write_records(self.detections, os.path.join(out_dir, "det.txt"))
        write_scenario(self.scenario, os.path.join(out_dir, "scenario.txt"))


def _visibility(box, occluders, width, height):
    x0, y0 = max(int(np.floor(box.x)), 0), max(int(np.floor(box.y)), 0)
    x1, y1 = min(int(np.ceil(box.x + box.w)), width), min(int(np.ceil(box.y + box.h)), height)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    own = ((ys >= box.y) & (ys < box.y + box.h))[:, None] & ((xs >= box.x) & (xs < box.x + box.w))[None, :]
    covered = np.zeros_like(own)
    for o in occluders:
        covered |= ((ys >= o.y) & (ys < o.y + o.h))[:, None] & ((xs >= o.x) & (xs < o.x + o.w))[None, :]
    total = own.sum()
    return float((own & ~covered).sum() / total) if total else 0.0


def generate_synthetic(scenario: SyntheticScenario, seed: int) -> SyntheticSequence:
    return SyntheticSequence(scenario, seed)


# --- named scenarios --------------------------------------------------------

def _linear(i, w, h, a, b, n, z=0, seed=None, start=1):
    return IdentitySpec(i, w, h, [(start, *a), (n, *b)], appearance_seed=i * 37 + 11 if seed is None else seed, z=z)


def scenario_single(n_frames=60):
    return SyntheticScenario(n_frames, 200, 160, [_linear(1, 24, 48, (50, 80), (150, 80), n_frames)])


def scenario_crossing2(n_frames=200):
    """Five targets; two crossings with occlusion (ids 1/2 and 3/4).

    In the slow 1/2 crossing the occluded target stays partly covered for
    many frames before it disappears, so its tracker model absorbs some of
    the occluder.  The 3/4 crossing is fast.
    """
    ids = [
        _linear(1, 24, 48, (40, 70), (280, 70), n_frames, z=0),
        _linear(2, 24, 48, (180, 74), (140, 74), n_frames, z=1),
        _linear(3, 24, 48, (50, 180), (270, 176), n_frames, z=0),
        _linear(4, 24, 48, (270, 184), (60, 180), n_frames, z=1),
        _linear(5, 24, 48, (150, 125), (175, 125), n_frames, z=0),
    ]
    # ids 3/4 cross later than 1/2
    ids[3].waypoints = [(1, 290, 184), (60, 290, 184), (n_frames, 60, 180)]
    return SyntheticScenario(n_frames, 320, 240, ids)


def scenario_occlusion(n_frames=60, hidden=(25, 27)):
    """Single target hidden for a few frames, then reappearing on its path."""
    scn = scenario_single(n_frames)
    scn.occlusions = [(1, hidden[0], hidden[1])]
    return scn


SCENARIOS = {
    "single": scenario_single,
    "crossing2": scenario_crossing2,
    "occlusion": scenario_occlusion,
}


def named_scenario(name) -> SyntheticScenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise InvalidArgument(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


# --- key-value scenario files -----------------------------------------------

def write_scenario(scn: SyntheticScenario, path):
    lines = [
        f"frames = {scn.n_frames}", f"width = {scn.width}", f"height = {scn.height}",
        f"frame_rate = {scn.frame_rate}", f"det.jitter = {scn.jitter}",
        f"det.miss_rate = {scn.miss_rate}", f"det.fp_rate = {scn.fp_rate}",
        f"det.min_visibility = {scn.det_min_visibility}", f"background_seed = {scn.background_seed}",
    ]
    for i in scn.identities:
        pts = " ".join(f"{f}:{x}:{y}" for f, x, y in i.waypoints)
        lines.append(f"target.{i.id} = {i.w} {i.h} {i.z} {i.appearance_seed} ; {pts}")
    for tid, a, b in scn.occlusions:
        lines.append(f"occlude.{tid} = {a} {b}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scenario(path) -> SyntheticScenario:
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    ids, occl = [], []
    for key, value in kv.items():
        if key.startswith("target."):
            head, _, pts = value.partition(";")
            w, h, z, aseed = head.split()
            wps = [tuple(float(v) for v in p.split(":")) for p in pts.split()]
            wps = [(int(f), x, y) for f, x, y in wps]
            ids.append(IdentitySpec(int(key.split(".", 1)[1]), float(w), float(h), wps, int(aseed), int(z)))
        elif key.startswith("occlude."):
            a, b = value.split()
            occl.append((int(key.split(".", 1)[1]), int(a), int(b)))
    try:
        return SyntheticScenario(
            int(kv["frames"]), int(kv["width"]), int(kv["height"]), sorted(ids, key=lambda i: i.id),
            frame_rate=float(kv.get("frame_rate", 30)), jitter=float(kv.get("det.jitter", 0)),
            miss_rate=float(kv.get("det.miss_rate", 0)), fp_rate=float(kv.get("det.fp_rate", 0)),
            det_min_visibility=float(kv.get("det.min_visibility", 0.5)),
            background_seed=int(kv.get("background_seed", 0)), occlusions=occl,
        )
    except KeyError as exc:
        raise InvalidArgument(f"{path}: missing scenario key {exc}") from None
