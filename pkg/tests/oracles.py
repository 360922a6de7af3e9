"""Independent reference implementations used by the tests.

Everything here works in the spatial domain with explicit loops or dense
matrices, so it shares no code path with the FFT-based library routines.
"""
import itertools

import numpy as np


def circular_conv(x, f):
    """Brute-force periodic convolution ``sum_tau x(t - tau) f(tau)`` of two 2-D grids."""
    n1, n2 = x.shape
    out = np.zeros((n1, n2))
    for t1 in range(n1):
        for t2 in range(n2):
            acc = 0.0
            for a in range(n1):
                for b in range(n2):
                    acc += x[(t1 - a) % n1, (t2 - b) % n2] * f[a, b]
            out[t1, t2] = acc
    return out


def circulant(x):
    """Dense ``(P, P)`` matrix of periodic convolution with ``x`` on a flattened grid."""
    n1, n2 = x.shape
    t1, t2 = np.divmod(np.arange(n1 * n2), n2)
    return x[(t1[:, None] - t1[None, :]) % n1, (t2[:, None] - t2[None, :]) % n2]


def sample_matrix(x):
    """``(P, D*P)`` map from stacked spatial filter channels to the score map."""
    return np.concatenate([circulant(xd) for xd in x], axis=1)


def dense_scores(x, f):
    return (sample_matrix(x) @ f.reshape(-1)).reshape(x.shape[1:])


def dense_q(f_prev, x, y):
    """Loss weight per location from the previous spatial filter, dense route."""
    r = dense_scores(x, f_prev) - y
    peak = np.abs(r).max()
    if peak < 1e-12:
        return np.ones_like(y)
    return (r / peak) ** 2


def dense_solve(xs, ys, alphas, w, qs=None):
    """Minimizer of ``sum_j a_j ||q_j (C_j f - y_j)||^2 + sum_d ||w f_d||^2`` by a direct solve.

    Returns the spatial filter ``(D, N1, N2)``.
    """
    D = xs[0].shape[0]
    P = w.size
    H = np.kron(np.eye(D), np.diag(w.reshape(-1) ** 2))
    b = np.zeros(D * P)
    for j, (x, y, a) in enumerate(zip(xs, ys, alphas)):
        A = sample_matrix(x)
        weight = np.ones(P) if qs is None else qs[j].reshape(-1) ** 2
        H += a * A.T @ (weight[:, None] * A)
        b += a * A.T @ (weight * y.reshape(-1))
    return np.linalg.solve(H, b).reshape(D, *w.shape)


def dense_objective(xs, ys, alphas, w, f, qs=None):
    total = 0.0
    for j, (x, y, a) in enumerate(zip(xs, ys, alphas)):
        r = dense_scores(x, f) - y
        if qs is not None:
            r = qs[j] * r
        total += a * np.sum(r ** 2)
    return total + sum(np.sum((w * fd) ** 2) for fd in f)


def random_instance(rng, n_max=16, d_max=3, m_max=3):
    """Random small filter-learning problem on the periodic grid."""
    n1 = int(rng.integers(4, n_max + 1))
    n2 = int(rng.integers(4, n_max + 1))
    D = int(rng.integers(1, d_max + 1))
    M = int(rng.integers(1, m_max + 1))
    xs = [rng.normal(size=(D, n1, n2)) for _ in range(M)]
    ys = []
    for _ in range(M):
        c1, c2 = rng.integers(n1), rng.integers(n2)
        d1 = np.minimum(np.abs(np.arange(n1) - c1), n1 - np.abs(np.arange(n1) - c1))
        d2 = np.minimum(np.abs(np.arange(n2) - c2), n2 - np.abs(np.arange(n2) - c2))
        ys.append(np.exp(-(d1[:, None] ** 2 + d2[None, :] ** 2) / 2.0))
    alphas = rng.random(M) + 0.1
    alphas /= alphas.sum()
    w = 0.05 + rng.random((n1, n2))
    f_prev = rng.normal(size=(D, n1, n2)) * 0.1
    return xs, ys, alphas, w, f_prev


# --- tracking metrics ------------------------------------------------------

def _box_iou(a, b):
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    ih = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def _best_matching(pairs_ok, cost, gs, hs):
    """Exhaustive search: max cardinality, then min total cost."""
    best = (0, 0.0, [])
    for k in range(min(len(gs), len(hs)), 0, -1):
        for gsub in itertools.combinations(gs, k):
            for hperm in itertools.permutations(hs, k):
                pairs = list(zip(gsub, hperm))
                if all(pairs_ok[p] for p in pairs):
                    c = sum(cost[p] for p in pairs)
                    if best[0] < k or (best[0] == k and c < best[1]):
                        best = (k, c, pairs)
        if best[0] == k:
            break
    return best[2]


def exhaustive_clear_mot(gt, hyp, thr=0.5):
    """CLEAR-MOT counts with an exhaustive per-frame matcher.

    ``gt`` / ``hyp``: dict frame -> list of ``(id, (x, y, w, h))``.
    Returns ``(FP, FN, IDS, n_gt, iou_sum, matches)``.
    """
    last, prev = {}, {}
    fp = fn = ids = n_gt = matches = 0
    iou_sum = 0.0
    for f in sorted(set(gt) | set(hyp)):
        gs, hs = gt.get(f, []), hyp.get(f, [])
        n_gt += len(gs)
        ious = {(i, j): _box_iou(gs[i][1], hs[j][1]) for i in range(len(gs)) for j in range(len(hs))}
        ok = {p: v >= thr for p, v in ious.items()}
        cost = {p: 1.0 - v for p, v in ious.items()}
        kept = []
        for i, (gid, _) in enumerate(gs):
            if gid in prev:
                for j, (hid, _) in enumerate(hs):
                    if hid == prev[gid] and ok[(i, j)]:
                        kept.append((i, j))
        free_g = [i for i in range(len(gs)) if i not in {p[0] for p in kept}]
        free_h = [j for j in range(len(hs)) if j not in {p[1] for p in kept}]
        pairs = kept + _best_matching(ok, cost, free_g, free_h)
        cur = {}
        for i, j in pairs:
            gid, hid = gs[i][0], hs[j][0]
            if gid in last and last[gid] != hid:
                ids += 1
            last[gid] = hid
            cur[gid] = hid
            iou_sum += ious[(i, j)]
        matches += len(pairs)
        fp += len(hs) - len(pairs)
        fn += len(gs) - len(pairs)
        prev = cur
    return fp, fn, ids, n_gt, iou_sum, matches
