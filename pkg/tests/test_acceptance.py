"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from dmantrack import filter_core as fc
from dmantrack.dman import layers as L
from dmantrack.dman import san as S
from dmantrack.dman import tan as T
from dmantrack.dman.data import make_pairs, make_tracklets
from dmantrack.dman.optim import gradient_check
from dmantrack.dman.train import foreign_minimum_rate, verification_accuracy
from dmantrack.imaging import BoundingBox
from dmantrack.metrics import evaluate
from dmantrack.mot_io import FrameRecord, group_by_frame
from dmantrack.pipeline import LOST, TRACKED, PipelineConfig, run_sequence, update_state
from dmantrack.synthetic import generate_synthetic, scenario_crossing2

from oracles import dense_objective, dense_q, dense_solve, exhaustive_clear_mot, random_instance
from scenes import distractor_trial, tracker_config

N_INSTANCES = 50


@pytest.fixture
def verdict(capsys):
    def report(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] acceptance {number:2d} {name}: {detail}")
        assert ok, detail
    return report


def spectra(xs):
    return np.stack([fc.fft2(x) for x in xs])


def instances():
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(N_INSTANCES):
        xs, ys, alphas, w, f_prev = random_instance(rng, n_max=16, d_max=3, m_max=3)
        qs = [dense_q(f_prev, x, y) for x, y in zip(xs, ys)]
        out.append((xs, ys, alphas, w, qs))
    return out


@pytest.fixture(scope="module")
def solver_instances():
    return instances()


def test_01_solver_matches_dense_solve(solver_instances, verdict):
    worst, elapsed = 0.0, 0.0
    for xs, ys, alphas, w, qs in solver_instances:
        system = fc.NormalSystem(spectra(xs), np.stack(ys), alphas, w, np.stack(qs), True)
        t0 = time.perf_counter()
        f_hat = fc.solve_filter(system, max_iter=5000, tol=1e-12).f_hat
        elapsed += time.perf_counter() - t0
        ref = dense_solve(xs, ys, alphas, w, qs)
        worst = max(worst, np.linalg.norm(fc.ifft2(f_hat).real - ref) / np.linalg.norm(ref))
    verdict(1, "CG vs dense direct solve", worst <= 1e-6 and elapsed < 5.0,
            f"max relative error {worst:.2e} (tol 1e-6), CG time {elapsed:.2f}s (limit 5s)")


def test_02_unit_weights_reduce_to_plain_solve(solver_instances, verdict):
    worst = 0.0
    for xs, ys, alphas, w, _ in solver_instances:
        ones = np.ones((len(ys),) + ys[0].shape)
        a = fc.solve_filter(fc.NormalSystem(spectra(xs), np.stack(ys), alphas, w, ones, True),
                            max_iter=5000, tol=1e-14).f_hat
        b = fc.solve_filter(fc.NormalSystem(spectra(xs), np.stack(ys), alphas, w, None, False),
                            max_iter=5000, tol=1e-14).f_hat
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    verdict(2, "q = 1 reduction", worst <= 1e-8, f"max relative difference {worst:.2e} (tol 1e-8)")


def test_03_objective_monotone_along_cg(solver_instances, verdict):
    violations, checked, cross = 0, 0, 0.0
    for xs, ys, alphas, w, qs in solver_instances:
        system = fc.NormalSystem(spectra(xs), np.stack(ys), alphas, w, np.stack(qs), True)
        values = [fc.objective_value(system, np.zeros(system.shape, complex))]
        last = {}

        def cb(k, f_hat):
            values.append(fc.objective_value(system, f_hat))
            last["f"] = f_hat

        fc.solve_filter(system, max_iter=200, tol=1e-14, callback=cb)
        for a, b in zip(values, values[1:]):
            checked += 1
            violations += b > a + 1e-12 * max(1.0, abs(a))
        # the objective itself against a spatial-domain evaluation
        f = fc.ifft2(last["f"]).real
        dense = dense_objective(xs, ys, alphas, w, f, qs)
        cross = max(cross, abs(dense - values[-1]) / max(dense, 1e-300))
    verdict(3, "objective non-increasing over CG iterations", violations == 0 and cross < 1e-9,
            f"{violations} increases in {checked} steps; spectral vs spatial objective {cross:.1e}")


def test_04_modulating_factor_bounds(verdict):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(1000):
        n1, n2 = rng.integers(2, 20, 2)
        scores = rng.normal(size=(n1, n2)) * rng.uniform(0.01, 10)
        y = rng.random((n1, n2))
        x = np.zeros((1, n1, n2))
        x[0, 0, 0] = 1.0  # delta sample: response equals the filter
        q = fc.modulating_factor(fc.fft2(scores[None]), x, y)
        bad += not (q.min() >= 0.0 and q.max() <= 1.0 and abs(q.max() - 1.0) <= 1e-12)
    y = rng.random((6, 5))
    x = np.zeros((1, 6, 5))
    x[0, 0, 0] = 1.0
    degenerate = fc.modulating_factor(fc.fft2(y[None]), x, y)
    ok = bad == 0 and np.array_equal(degenerate, np.ones_like(y))
    verdict(4, "modulating factor in [0, 1], max 1", ok,
            f"{bad} of 1000 grids out of bounds; zero residual gives all ones: {np.array_equal(degenerate, np.ones_like(y))}")


def test_05_gradient_checks(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    errors = {}
    scfg = S.SanConfig(input_size=16, channels=(4, 8), d_c=8, n_ids=3)
    assert scfg.grid == 4
    sp = S.init_san(scfg)
    batch = (rng.random((3, 16, 16, 3)), rng.random((3, 16, 16, 3)), [0, 1, 2], [0, 2, 1], np.array([1.0, 0.0, 0.0]))
    _, g, _ = S.san_loss(sp, scfg, *batch)
    errors.update({f"san.{k}": v for k, v in gradient_check(lambda: S.san_loss(sp, scfg, *batch)[0], sp, g).items()})
    tcfg = T.TanConfig(d_in=8, d_h=8)
    tp = T.init_tan(tcfg)
    X = rng.normal(size=(3, 4, 8))
    y = np.array([1.0, 0.0, 1.0])
    _, g = T.tan_loss(tp, tcfg, X, y)
    errors.update({f"tan.{k}": v for k, v in gradient_check(lambda: T.tan_loss(tp, tcfg, X, y)[0], tp, g).items()})
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    verdict(5, "finite-difference gradient checks", errors[worst] <= 1e-4 and elapsed < 60,
            f"{len(errors)} blocks, worst {worst} {errors[worst]:.2e} (tol 1e-4), {elapsed:.1f}s (limit 60s)")


def test_06_attention_invariants(verdict):
    rng = np.random.default_rng(12)
    scfg = S.SanConfig(input_size=16, channels=(4, 8), d_c=8, n_ids=3)
    sp = S.init_san(scfg)
    Xa = S.embed(rng.random((16, 16, 3)), sp, scfg)
    Xb = S.embed(rng.random((16, 16, 3)), sp, scfg)
    out = S.san_forward(rng.random((16, 16, 3)), rng.random((16, 16, 3)), sp, scfg)
    sums = [out["A_a"].sum(), out["A_b"].sum(), out["p_id_a"].sum(), out["p_id_b"].sum()]
    tcfg = T.TanConfig(d_in=8, d_h=8)
    tp = T.init_tan(tcfg)
    seqs = rng.normal(size=(5, 6, 8))
    sums += list(T.tan_forward(seqs, tp, tcfg)["a"].sum(axis=1))
    sums += list(L.softmax(rng.normal(size=(20, 7)) * 30, axis=1).sum(axis=1))
    softmax_ok = max(abs(s - 1.0) for s in sums) <= 1e-6
    sym_ok = np.array_equal(S.similarity_matrix(Xa, Xb), S.similarity_matrix(Xb, Xa).T)
    single_ok = T.tan_forward(rng.normal(size=(1, 8)), tp, tcfg)["a"][0] == 1.0
    tp["theta_h"][:] = 0.0
    att = T.tan_forward(seqs, tp, tcfg)
    avg = T.tan_forward(seqs, tp, T.TanConfig(d_in=8, d_h=8, average_pooling=True))
    pool_ok = np.array_equal(att["a"], avg["a"]) and np.array_equal(att["similarity"], avg["similarity"])
    verdict(6, "attention invariants", softmax_ok and sym_ok and single_ok and pool_ok,
            f"softmax sums {softmax_ok}, S(a,b) = S(b,a)^T {sym_ok}, T=1 weight 1 {single_ok}, "
            f"zero theta_h equals average pooling {pool_ok}")


def test_07_toy_training(trained, verdict):
    ds = trained["dataset"]
    held_pairs = make_pairs(ds, 400, np.random.default_rng(999))
    acc = verification_accuracy(trained["san_params"], trained["san_cfg"], held_pairs)
    held_tracklets = make_tracklets(ds, 300, 8, np.random.default_rng(5), corrupt_prob=1.0)
    rate = foreign_minimum_rate(trained["san_params"], trained["san_cfg"], trained["tan_params"], trained["tan_cfg"],
                                held_tracklets)
    secs = trained["seconds"]
    verdict(7, "toy attention-network training", acc >= 0.9 and rate >= 0.8 and secs < 300,
            f"held-out verification accuracy {acc:.3f} (>= 0.90), foreign sample weighted lowest in "
            f"{rate:.3f} of corrupted tracklets (>= 0.80), training {secs:.0f}s (< 300s)")


def test_08_metrics_oracle(verdict):
    def rec(f, i, x):
        return FrameRecord(f, i, BoundingBox(x, 0, 10, 10), 1.0)

    def to_records(d):
        return [FrameRecord(f, i, BoundingBox(*b), 1.0) for f, rows in d.items() for i, b in rows]

    gt = [rec(f, 1, 0) for f in range(1, 11)]
    hyp = [rec(f, 1 if f < 6 else 2, 0) for f in range(1, 11)]
    sw = evaluate(gt, hyp)
    switch_ok = abs(sw.MOTA - 0.9) < 1e-12 and sw.IDF == 0.5 and sw.IDS == 1
    perfect = evaluate(gt, gt)
    perfect_ok = perfect.MOTA == 1 and perfect.MOTP == 1 and perfect.IDF == 1
    mismatches = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        g, h = {}, {}
        pos = rng.uniform(0, 40, (4, 2))
        for f in range(1, 7):
            pos += rng.normal(0, 3, pos.shape)
            g[f] = [(i + 1, (*pos[i], 10.0, 12.0)) for i in range(4) if rng.random() < 0.85]
            hs = []
            for i in range(4):
                hid = int(rng.integers(1, 6))
                if rng.random() < 0.8 and hid not in [x[0] for x in hs]:
                    hs.append((hid, (*(pos[i] + rng.normal(0, 2.5, 2)), 10.0, 12.0)))
            h[f] = hs
        fp, fn, ids, n_gt, iou_sum, matches = exhaustive_clear_mot(g, h)
        r = evaluate(to_records(g), to_records(h))
        mismatches += (r.FP, r.FN, r.IDS, r.tp) != (fp, fn, ids, matches) or abs(r.iou_sum - iou_sum) > 1e-9
    verdict(8, "metrics against hand counts and exhaustive matcher", switch_ok and perfect_ok and mismatches == 0,
            f"switch scenario MOTA {sw.MOTA:.3f} IDF {sw.IDF:.3f} IDS {sw.IDS}; perfect MOTA/MOTP/IDF "
            f"{perfect.MOTA}/{perfect.MOTP}/{perfect.IDF}; {mismatches} of 200 random instances disagree")


def _run(mode, model, scn, seq):
    cfg = PipelineConfig(mode=mode, frame_rate=scn.frame_rate)
    rows = run_sequence(seq.frame, group_by_frame(seq.detections), scn.n_frames, cfg, tracker_config(), model)
    return evaluate(seq.gt, [FrameRecord(f, i, b, 1.0) for f, i, b in rows])


def test_09_end_to_end_crossings(trained, verdict):
    scn = scenario_crossing2()
    seq = generate_synthetic(scn, 7)
    full = _run("full", trained["model"], scn, seq)
    b1 = _run("B1", None, scn, seq)
    ok = full.MOTA >= 0.95 and full.IDS == 0 and b1.IDS > full.IDS
    verdict(9, "end-to-end synthetic crossings", ok,
            f"full MOTA {full.MOTA:.4f} IDS {full.IDS} (need >= 0.95, 0); tracker-score association "
            f"MOTA {b1.MOTA:.4f} IDS {b1.IDS} (need IDS > {full.IDS})")


def test_10_state_truth_table(verdict):
    cfg = PipelineConfig(tau_s=0.2, tau_o=0.5)
    eps = 1e-9
    table = [
        (0.2, 0.8, LOST), (0.2 + eps, 0.8, TRACKED), (0.2 - eps, 0.8, LOST),
        (0.5, 0.5, LOST), (0.5, 0.5 + eps, TRACKED), (0.5, 0.5 - eps, LOST),
        (0.2, 0.5, LOST), (0.2 + eps, 0.5 + eps, TRACKED), (0.0, 1.0, LOST), (1.0, 0.0, LOST),
        (0.25, 0.8, TRACKED), (0.1, 0.9, LOST), (0.5, 0.0, LOST), (1.0, 1.0, TRACKED),
    ]
    wrong = [(s, o) for s, o, want in table if update_state(s, o, cfg) != want]
    verdict(10, "tracked/lost truth table", not wrong, f"{len(table) - len(wrong)}/{len(table)} rows correct {wrong}")


def test_11_cost_sensitive_distractor(verdict):
    wins = 0
    for seed in range(50):
        wins += distractor_trial(seed, True) < distractor_trial(seed, False)
    verdict(11, "distractor suppression by the cost-sensitive update", wins >= 45,
            f"distractor confidence lower in {wins}/50 trials (need >= 45)")
