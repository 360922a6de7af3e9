"""MOTChallenge comma-separated detection / ground-truth / result files.

Row layout: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z``.
Ground truth written by the synthetic generator follows the MOT16 gt
convention in the trailing columns: ``conf`` is the consider flag and the
``x, y`` slots carry the class (1) and visibility ratio.
"""
from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .imaging import BoundingBox, load_image

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    id: int
    box: BoundingBox
    conf: float = -1.0
    world: tuple = (-1.0, -1.0, -1.0)

    @property
    def visibility(self):
        """Visibility ratio for MOT16-style gt rows (1.0 when absent)."""
        v = self.world[1]
        return 1.0 if v < 0 else v


_DEFAULTS = [None, None, None, None, None, None, -1.0, -1.0, -1.0, -1.0]


def parse_mot_line(line, path="<string>", lineno=1):
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) < 6:
        raise ParseError(path, lineno, f"expected at least 6 fields, got {len(fields)}")
    values = []
    for k, raw in enumerate(fields[:10]):
        if raw == "" and _DEFAULTS[k] is not None:
            values.append(_DEFAULTS[k])
            continue
        try:
            values.append(float(raw))
        except ValueError:
            raise ParseError(path, lineno, f"malformed numeric field {k + 1}: {raw!r}") from None
    values += _DEFAULTS[len(values):]
    frame, tid, x, y, w, h, conf, wx, wy, wz = values
    if w <= 0 or h <= 0:
        return None
    return FrameRecord(int(frame), int(tid), BoundingBox(x, y, w, h), conf, (wx, wy, wz))


def parse_mot_file(path, return_skipped=False):
    """Parse a MOTChallenge file; rows with nonpositive box sizes are skipped."""
    records, skipped = [], 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_mot_line(line, path, lineno)
            if rec is None:
                skipped += 1
                continue
            records.append(rec)
    if skipped:
        log.warning("%s: skipped %d rows with nonpositive box size", path, skipped)
    if return_skipped:
        return records, skipped
    return records


def _fmt(v):
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return repr(v)


def format_record(rec: FrameRecord) -> str:
    b = rec.box
    fields = [rec.frame, rec.id, b.x, b.y, b.w, b.h, rec.conf, *rec.world]
    return ",".join(_fmt(f) for f in fields)


def write_records(records, path):
    """Write records verbatim (sorted by frame, id)."""
    rows = sorted(records, key=lambda r: (r.frame, r.id))
    with open(path, "w") as fh:
        for rec in rows:
            fh.write(format_record(rec) + "\n")


def write_results(tracks, path):
    """Write tracker output with conf 1 and world coordinates -1.

    ``tracks`` is an iterable of ``FrameRecord`` or of ``(frame, id, box)``.
    """
    rows = []
    for t in tracks:
        frame, tid, box = (t.frame, t.id, t.box) if isinstance(t, FrameRecord) else t
        if tid <= 0:
            raise ValueError(f"result ids must be positive, got {tid}")
        rows.append(FrameRecord(int(frame), int(tid), box, 1.0, (-1.0, -1.0, -1.0)))
    write_records(rows, path)


def group_by_frame(records):
    out = defaultdict(list)
    for r in records:
        out[r.frame].append(r)
    return dict(out)


def frame_paths(frames_dir):
    exts = (".ppm", ".pgm", ".png", ".jpg", ".jpeg")
    names = sorted(n for n in os.listdir(frames_dir) if n.lower().endswith(exts))
    return [os.path.join(frames_dir, n) for n in names]


class FrameDirectory:
    """Numbered image files in a directory, indexed 1-based like MOT frames."""

    def __init__(self, frames_dir):
        self.paths = frame_paths(frames_dir)

    def __len__(self):
        return len(self.paths)

    def frame(self, k) -> np.ndarray:
        return load_image(self.paths[k - 1])
