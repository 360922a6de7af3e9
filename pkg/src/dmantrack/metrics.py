"""CLEAR-MOT and identity (IDF1) metrics for box trajectories.

Ground-truth rows whose ``conf`` flag is 0 are treated as ignore regions: a
hypothesis matched to one in its frame is dropped, and the row itself counts
neither as a miss nor as a target.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .imaging import iou_matrix

_BIG = 1e9


def match_frame(ious, threshold):
    """Pairs ``(i, j)`` of a maximum-cardinality, minimum-cost (``1 - IoU``) matching.

    Only pairs with ``IoU >= threshold`` are admissible.
    """
    ious = np.asarray(ious, dtype=float)
    if ious.size == 0:
        return []
    ok = ious >= threshold
    cost = np.where(ok, 1.0 - ious, _BIG)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if ok[i, j]]


def _by_frame(records):
    out = defaultdict(list)
    for r in records:
        out[r.frame].append(r)
    return out


def preprocess(gt, hyp, threshold=0.5):
    """Drop ignored gt rows and the hypotheses matched to them in the same frame."""
    g_by, h_by = _by_frame(gt), _by_frame(hyp)
    g_keep, h_keep = [], []
    for f in sorted(set(g_by) | set(h_by)):
        gs, hs = g_by.get(f, []), h_by.get(f, [])
        ignored = [k for k, g in enumerate(gs) if g.conf == 0]
        drop = set()
        if ignored and hs:
            M = iou_matrix([g.box for g in gs], [h.box for h in hs])
            for i, j in match_frame(M, threshold):
                if gs[i].conf == 0:
                    drop.add(j)
        g_keep.extend(g for g in gs if g.conf != 0)
        h_keep.extend(h for j, h in enumerate(hs) if j not in drop)
    return g_keep, h_keep


@dataclass
class MetricReport:
    MOTA: float = 0.0
    MOTP: float = 0.0
    IDF: float = 0.0
    IDP: float = 0.0
    IDR: float = 0.0
    MT: float = 0.0
    ML: float = 0.0
    FP: int = 0
    FN: int = 0
    IDS: int = 0
    Frag: int = 0
    # raw counts for pooling across sequences
    n_gt: int = 0
    n_hyp: int = 0
    tp: int = 0
    iou_sum: float = 0.0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    n_targets: int = 0
    n_mt: int = 0
    n_ml: int = 0

    def finalize(self):
        self.MOTA = 1.0 - (self.FN + self.FP + self.IDS) / self.n_gt if self.n_gt else float("nan")
        self.MOTP = self.iou_sum / self.tp if self.tp else 0.0
        self.IDP = self.idtp / (self.idtp + self.idfp) if self.idtp + self.idfp else 0.0
        self.IDR = self.idtp / (self.idtp + self.idfn) if self.idtp + self.idfn else 0.0
        den = 2 * self.idtp + self.idfp + self.idfn
        self.IDF = 2 * self.idtp / den if den else 0.0
        self.MT = self.n_mt / self.n_targets if self.n_targets else 0.0
        self.ML = self.n_ml / self.n_targets if self.n_targets else 0.0
        return self

    def as_dict(self):
        return asdict(self)


def clear_mot(gt, hyp, iou_threshold=0.5, report: MetricReport | None = None):
    """CLEAR-MOT counts with match persistence across frames."""
    gt, hyp = preprocess(gt, hyp, iou_threshold)
    rep = report or MetricReport()
    g_by, h_by = _by_frame(gt), _by_frame(hyp)
    last = {}  # gt id -> hyp id of its latest match
    prev = {}  # gt id -> hyp id matched in the previous frame
    was_matched = {}  # gt id -> matched in its previous present frame
    frag = defaultdict(int)
    seen = defaultdict(int)
    hits = defaultdict(int)
    for f in sorted(set(g_by) | set(h_by)):
        gs, hs = g_by.get(f, []), h_by.get(f, [])
        rep.n_gt += len(gs)
        rep.n_hyp += len(hs)
        M = iou_matrix([g.box for g in gs], [h.box for h in hs]) if gs and hs else np.zeros((len(gs), len(hs)))
        g_index = {g.id: i for i, g in enumerate(gs)}
        h_index = {h.id: j for j, h in enumerate(hs)}
        pairs = []
        for gid, hid in prev.items():
            i, j = g_index.get(gid), h_index.get(hid)
            if i is not None and j is not None and M[i, j] >= iou_threshold:
                pairs.append((i, j))
        gi = [i for i in range(len(gs)) if i not in {p[0] for p in pairs}]
        hj = [j for j in range(len(hs)) if j not in {p[1] for p in pairs}]
        if gi and hj:
            sub = M[np.ix_(gi, hj)]
            pairs += [(gi[a], hj[b]) for a, b in match_frame(sub, iou_threshold)]
        cur = {}
        for i, j in pairs:
            gid, hid = gs[i].id, hs[j].id
            if gid in last and last[gid] != hid:
                rep.IDS += 1
            last[gid] = hid
            cur[gid] = hid
            rep.tp += 1
            rep.iou_sum += M[i, j]
        rep.FP += len(hs) - len(pairs)
        rep.FN += len(gs) - len(pairs)
        for g in gs:
            m = g.id in cur
            seen[g.id] += 1
            hits[g.id] += m
            if m and was_matched.get(g.id) is False and hits[g.id] > 1:
                frag[g.id] += 1
            was_matched[g.id] = m
        prev = cur
    rep.Frag = int(sum(frag.values()))
    rep.n_targets = len(seen)
    for gid, n in seen.items():
        cov = hits[gid] / n
        rep.n_mt += cov >= 0.8
        rep.n_ml += cov <= 0.2
    return rep


def id_metrics(gt, hyp, iou_threshold=0.5, report: MetricReport | None = None):
    """Identity precision / recall / F1 from the best one-to-one identity mapping."""
    gt, hyp = preprocess(gt, hyp, iou_threshold)
    rep = report or MetricReport()
    g_ids = sorted({g.id for g in gt})
    h_ids = sorted({h.id for h in hyp})
    gi = {g: k for k, g in enumerate(g_ids)}
    hi = {h: k for k, h in enumerate(h_ids)}
    overlap = np.zeros((len(g_ids), len(h_ids)))
    g_by, h_by = _by_frame(gt), _by_frame(hyp)
    for f in set(g_by) & set(h_by):
        gs, hs = g_by[f], h_by[f]
        M = iou_matrix([g.box for g in gs], [h.box for h in hs])
        for i, j in zip(*np.nonzero(M >= iou_threshold)):
            overlap[gi[gs[i].id], hi[hs[j].id]] += 1
    idtp = 0
    if overlap.size:
        rows, cols = linear_sum_assignment(-overlap)
        idtp = int(overlap[rows, cols].sum())
    rep.idtp = idtp
    rep.idfn = len(gt) - idtp
    rep.idfp = len(hyp) - idtp
    return rep


def evaluate(gt, hyp, iou_threshold=0.5) -> MetricReport:
    rep = clear_mot(gt, hyp, iou_threshold)
    id_metrics(gt, hyp, iou_threshold, rep)
    return rep.finalize()


def aggregate(reports) -> MetricReport:
    """Pool raw counts of several sequences and recompute the ratios."""
    out = MetricReport()
    for r in reports:
        for k in ("FP", "FN", "IDS", "Frag", "n_gt", "n_hyp", "tp", "iou_sum", "idtp", "idfp", "idfn",
                  "n_targets", "n_mt", "n_ml"):
            setattr(out, k, getattr(out, k) + getattr(r, k))
    return out.finalize()


_COLUMNS = ("MOTA", "MOTP", "IDF", "IDP", "IDR", "MT", "ML", "FP", "FN", "IDS", "Frag")


def format_table(named_reports) -> str:
    """Aligned plain-text table, one row per ``(name, report)``."""
    head = ["sequence"] + list(_COLUMNS)
    rows = []
    for name, r in named_reports:
        cells = [name]
        for c in _COLUMNS:
            v = getattr(r, c)
            cells.append(f"{v:.3f}" if isinstance(v, float) else str(v))
        rows.append(cells)
    widths = [max(len(x[k]) for x in [head] + rows) for k in range(len(head))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [head] + rows]
    return "\n".join(lines) + "\n"


def format_kv(named_reports) -> str:
    lines = []
    for name, r in named_reports:
        for k, v in r.as_dict().items():
            lines.append(f"{name}.{k} = {v}")
    return "\n".join(lines) + "\n"
