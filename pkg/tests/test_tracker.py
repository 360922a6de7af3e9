import copy

import numpy as np
import pytest

from dmantrack import filter_core as fc
from dmantrack import tracker as sot
from dmantrack.imaging import BoundingBox, InvalidArgument
from dmantrack.synthetic import IdentitySpec, SyntheticScenario, generate_synthetic

from scenes import distractor_trial, static_scene, tracker_config


@pytest.fixture(scope="module")
def scene():
    seq, ident = static_scene(seed=1)
    return seq, ident, sot.init_tracker(seq.frame(1), ident.box(1), tracker_config())


def test_same_frame_self_consistency(scene):
    seq, ident, h0 = scene
    h = copy.deepcopy(h0)
    box, s = sot.track(h, seq.frame(1))
    a, b = np.array(box.center), np.array(ident.box(1).center)
    assert np.abs(a - b).max() <= 0.5
    assert s >= 0.9 * h0.score
    assert s == pytest.approx(h.last_response.max())


def test_three_pixel_translation():
    seq, ident = static_scene(seed=2, center=(100.0, 80.0))
    moved, _ = static_scene(seed=2, center=(103.0, 80.0))
    h = sot.init_tracker(seq.frame(1), ident.box(1), tracker_config())
    box, _ = sot.track(h, moved.frame(1))
    dx = box.center[0] - ident.box(1).center[0]
    dy = box.center[1] - ident.box(1).center[1]
    assert dx == pytest.approx(3.0, abs=1.0)
    assert abs(dy) <= 1.0


def test_blank_frame_scores_below_lost_threshold():
    ident = IdentitySpec(1, 24, 48, [(1, 100, 80), (2, 100, 80)], appearance_seed=9)
    scn = SyntheticScenario(2, 200, 160, [ident], background_seed=3, occlusions=[(1, 2, 2)])
    seq = generate_synthetic(scn, 0)
    h = sot.init_tracker(seq.frame(1), ident.box(1), tracker_config())
    _, s = sot.track(h, seq.frame(2))
    assert s < 0.2


def test_determinism(scene):
    seq, ident, h0 = scene
    h1 = sot.init_tracker(seq.frame(1), ident.box(1), tracker_config())
    assert np.array_equal(h1.f_hat, h0.f_hat)
    a, b = copy.deepcopy(h0), copy.deepcopy(h0)
    for k in (2, 3):
        assert sot.track(a, seq.frame(k)) == sot.track(b, seq.frame(k))
        sot.update_model(a, seq.frame(k))
        sot.update_model(b, seq.frame(k))
    assert np.array_equal(a.f_hat, b.f_hat)


def test_cost_sensitive_off_matches_plain_solve(scene):
    seq, ident, _ = scene
    h = sot.init_tracker(seq.frame(1), ident.box(1), tracker_config(cost_sensitive=False))
    system = fc.NormalSystem.from_memory(h.memory, h.window, cost_sensitive=False)
    ref = fc.solve_filter(system, max_iter=100, tol=h.config.cg_tol).f_hat
    assert np.array_equal(h.f_hat, ref)


def test_update_does_not_increase_objective(scene):
    seq, _, h0 = scene
    h = copy.deepcopy(h0)
    sot.track(h, seq.frame(2))
    warm = h.f_hat
    sot.update_model(h, seq.frame(2))
    q = fc.modulating_factors(warm, np.stack(h.memory.x_hat), np.stack(h.memory.labels))
    system = fc.NormalSystem.from_memory(h.memory, h.window, q=q, cost_sensitive=True)
    assert fc.objective_value(system, h.f_hat) <= fc.objective_value(system, warm) * (1 + 1e-12)
    assert h.f_prev is warm


def test_memory_stays_at_capacity(scene):
    seq, _, h0 = scene
    h = copy.deepcopy(h0)
    h.memory = fc.SampleMemory(3, h.config.learning_rate)
    for k in range(5):
        sot.update_model(h, seq.frame(1 + k % 3))
        assert len(h.memory) == min(k + 1, 3)


def test_occlusion_noise_does_not_raise_score():
    rng = np.random.default_rng(0)
    ok = total = 0
    for seed in range(10):
        seq, ident = static_scene(seed=seed)
        h0 = sot.init_tracker(seq.frame(1), ident.box(1), tracker_config())
        box = ident.box(1)
        for _ in range(4):
            frame = seq.frame(1).copy()
            x0 = int(box.x + rng.uniform(0, box.w / 2))
            y0 = int(box.y + rng.uniform(0, box.h / 2))
            frame[y0:y0 + int(box.h / 2), x0:x0 + int(box.w / 2)] = rng.random((int(box.h / 2), int(box.w / 2), 3))
            _, clean = sot.track(copy.deepcopy(h0), seq.frame(1))
            _, noisy = sot.track(copy.deepcopy(h0), frame)
            ok += noisy <= clean
            total += 1
    assert ok / total >= 0.95


def test_distractor_response_lower_with_cost_sensitive_loss():
    wins = sum(distractor_trial(s, True) < distractor_trial(s, False) for s in range(6))
    assert wins >= 5


def test_invalid_inputs(scene):
    seq, ident, h0 = scene
    with pytest.raises(InvalidArgument):
        sot.init_tracker(seq.frame(1), BoundingBox(10, 10, 0.5, 8), tracker_config())
    with pytest.raises(InvalidArgument):
        sot.init_tracker(seq.frame(1), BoundingBox(900, 900, 20, 20), tracker_config())
    with pytest.raises(InvalidArgument):
        sot.track(copy.deepcopy(h0), np.zeros((20, 20, 3)))


def test_score_candidate_prefers_target(scene):
    seq, ident, h0 = scene
    on = sot.score_candidate(h0, seq.frame(1), ident.box(1))
    off = sot.score_candidate(h0, seq.frame(1), BoundingBox(150, 100, 24, 48))
    assert on > 0.5 > off
