import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmantrack import filter_core as fc
from dmantrack.imaging import InvalidArgument

from oracles import circular_conv, dense_objective, dense_q, dense_solve, random_instance


def spectra(xs):
    return np.stack([fc.fft2(x) for x in xs])


def system_for(xs, ys, alphas, w, qs=None, cost_sensitive=True):
    return fc.NormalSystem(spectra(xs), np.stack(ys), alphas, w, None if qs is None else np.stack(qs), cost_sensitive)


def test_apply_filter_delta_returns_channel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 5))
    delta = np.zeros((2, 6, 5))
    delta[1, 0, 0] = 1.0
    np.testing.assert_allclose(fc.apply_filter(fc.fft2(delta), x), x[1], atol=1e-12)
    np.testing.assert_allclose(fc.apply_filter(np.zeros((2, 6, 5)), x), 0.0)


def test_apply_filter_matches_bruteforce_convolution():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 8, 8))
    f = rng.normal(size=(2, 8, 8))
    expected = circular_conv(x[0], f[0]) + circular_conv(x[1], f[1])
    np.testing.assert_allclose(fc.apply_filter(fc.fft2(f), x), expected, atol=1e-10)


def test_apply_filter_shape_mismatch():
    with pytest.raises(InvalidArgument):
        fc.apply_filter(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))


def test_modulating_factor_examples():
    y = np.zeros((6, 6))
    y[1, 1] = 1.0
    y[4, 2] = 0.5
    # zero previous filter: residual is -y, peaks of relative size 1 and 0.5
    q = fc.modulating_factor(np.zeros((1, 6, 6)), np.ones((1, 6, 6)), y)
    assert q[1, 1] == 1.0 and q[4, 2] == 0.25
    assert q.max() == 1.0
    # perfect fit and missing filter both fall back to ones
    np.testing.assert_array_equal(fc.modulating_factor(np.zeros((1, 6, 6)), np.ones((1, 6, 6)), np.zeros((6, 6))), 1.0)
    np.testing.assert_array_equal(fc.modulating_factor(None, np.ones((1, 6, 6)), y), 1.0)


def test_modulating_factor_matches_dense_route():
    rng = np.random.default_rng(2)
    xs, ys, _, _, f_prev = random_instance(rng, n_max=8)
    q = fc.modulating_factor(fc.fft2(f_prev), xs[0], ys[0])
    np.testing.assert_allclose(q, dense_q(f_prev, xs[0], ys[0]), atol=1e-12)
    qv = fc.modulating_factors(fc.fft2(f_prev), spectra(xs), np.stack(ys))
    np.testing.assert_allclose(qv[0], q, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_modulating_factor_bounds(seed):
    rng = np.random.default_rng(seed)
    xs, ys, _, _, f_prev = random_instance(rng, n_max=10, d_max=2, m_max=1)
    q = fc.modulating_factor(fc.fft2(f_prev), xs[0], ys[0])
    assert q.min() >= 0.0 and q.max() == pytest.approx(1.0, abs=1e-15)


def test_normal_operator_matches_dense_matrix():
    # q ignored: N = 8, D = 1, M = 1
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 8, 8))
    y = rng.random((8, 8))
    w = 0.1 + rng.random((8, 8))
    sys_ = system_for([x], [y], np.array([1.0]), w, qs=[rng.random((8, 8))], cost_sensitive=False)
    from oracles import sample_matrix

    A = sample_matrix(x)
    H = A.T @ A + np.diag(w.reshape(-1) ** 2)
    v = rng.normal(size=(1, 8, 8))
    out = fc.normal_apply(sys_, fc.fft2(v))
    np.testing.assert_allclose(np.real(fc.ifft2(out)), (H @ v.reshape(-1)).reshape(1, 8, 8), atol=1e-10)
    np.testing.assert_allclose(np.imag(fc.ifft2(out)), 0.0, atol=1e-10)
    np.testing.assert_array_equal(fc.normal_apply(sys_, np.zeros((1, 8, 8), complex)), 0.0)


def test_normal_operator_self_adjoint_and_positive():
    rng = np.random.default_rng(4)
    xs, ys, alphas, w, f_prev = random_instance(rng, n_max=10)
    qs = [dense_q(f_prev, x, y) for x, y in zip(xs, ys)]
    sys_ = system_for(xs, ys, alphas, w, qs)
    shape = sys_.shape
    for _ in range(5):
        u = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        v = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        lhs = np.vdot(fc.normal_apply(sys_, u), v)
        rhs = np.vdot(u, fc.normal_apply(sys_, v))
        assert abs(lhs - rhs) <= 1e-9 * abs(lhs)
        assert np.vdot(u, fc.normal_apply(sys_, u)).real > 0


def test_delta_sample_without_regularization_returns_label():
    x = np.zeros((1, 8, 8))
    x[0, 0, 0] = 1.0
    y = fc.gaussian_label((8, 8), 1.5)
    sys_ = system_for([x], [y], np.array([1.0]), np.zeros((8, 8)))
    res = fc.solve_filter(sys_, max_iter=10, tol=1e-12)
    np.testing.assert_allclose(res.f_hat[0], fc.fft2(y), atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_cg_matches_dense_solve(seed):
    rng = np.random.default_rng(100 + seed)
    xs, ys, alphas, w, f_prev = random_instance(rng, n_max=8, d_max=2, m_max=2)
    qs = [dense_q(f_prev, x, y) for x, y in zip(xs, ys)]
    ref = dense_solve(xs, ys, alphas, w, qs)
    res = fc.solve_filter(system_for(xs, ys, alphas, w, qs), max_iter=2000, tol=1e-13)
    f = fc.ifft2(res.f_hat)
    assert np.linalg.norm(f.real - ref) <= 1e-6 * np.linalg.norm(ref)
    # real-valued spatial filter
    assert np.abs(f.imag).max() <= 1e-10 * np.abs(f.real).max()


def test_unit_q_reduces_to_plain_system():
    rng = np.random.default_rng(5)
    xs, ys, alphas, w, _ = random_instance(rng, n_max=8)
    ones = [np.ones_like(y) for y in ys]
    a = fc.solve_filter(system_for(xs, ys, alphas, w, ones, True), max_iter=2000, tol=1e-14).f_hat
    b = fc.solve_filter(system_for(xs, ys, alphas, w, None, False), max_iter=2000, tol=1e-14).f_hat
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(b)


def test_objective_examples_and_dense_agreement():
    rng = np.random.default_rng(6)
    xs, ys, alphas, w, f_prev = random_instance(rng, n_max=8)
    qs = [dense_q(f_prev, x, y) for x, y in zip(xs, ys)]
    sys_ = system_for(xs, ys, alphas, w, qs)
    zero = np.zeros(sys_.shape, complex)
    expected = sum(a * np.sum((q * y) ** 2) for a, q, y in zip(alphas, qs, ys))
    assert fc.objective_value(sys_, zero) == pytest.approx(expected, rel=1e-12)
    f = rng.normal(size=sys_.shape)
    assert fc.objective_value(sys_, fc.fft2(f)) == pytest.approx(dense_objective(xs, ys, alphas, w, f, qs), rel=1e-10)
    y0 = [np.zeros_like(y) for y in ys]
    assert fc.objective_value(system_for(xs, y0, alphas, w, qs), zero) == 0.0


def test_objective_non_increasing_along_cg():
    rng = np.random.default_rng(7)
    xs, ys, alphas, w, f_prev = random_instance(rng, n_max=10)
    qs = [dense_q(f_prev, x, y) for x, y in zip(xs, ys)]
    sys_ = system_for(xs, ys, alphas, w, qs)
    values = []
    fc.solve_filter(sys_, max_iter=60, tol=1e-14, callback=lambda k, f: values.append(fc.objective_value(sys_, f)))
    assert len(values) > 5
    assert all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(values, values[1:]))


def test_warm_start_converged_solution_stays_put():
    rng = np.random.default_rng(8)
    xs, ys, alphas, w, _ = random_instance(rng, n_max=8)
    sys_ = system_for(xs, ys, alphas, w)
    first = fc.solve_filter(sys_, max_iter=2000, tol=1e-12)
    again = fc.solve_filter(sys_, max_iter=5, tol=1e-10, warm_start=first.f_hat)
    assert again.iterations == 0
    np.testing.assert_allclose(again.f_hat, first.f_hat)


def test_numeric_failure_on_nan_input():
    x = np.ones((1, 4, 4))
    x[0, 0, 0] = np.nan
    sys_ = system_for([x], [np.ones((4, 4))], np.array([1.0]), np.ones((4, 4)))
    with pytest.raises(fc.NumericFailure) as err:
        fc.solve_filter(sys_, max_iter=5)
    assert err.value.iteration == 1


def test_invalid_tolerance_and_shapes():
    sys_ = system_for([np.ones((1, 4, 4))], [np.ones((4, 4))], np.array([1.0]), np.ones((4, 4)))
    with pytest.raises(InvalidArgument):
        fc.solve_filter(sys_, tol=0)
    with pytest.raises(InvalidArgument):
        fc.normal_apply(sys_, np.zeros((2, 4, 4)))
    with pytest.raises(InvalidArgument):
        fc.NormalSystem(np.zeros((1, 1, 4, 4)), np.zeros((2, 4, 4)), np.ones(1), np.ones((4, 4)))


def test_sample_memory_weights_and_eviction():
    lr = 0.2
    mem = fc.SampleMemory(capacity=3, learning_rate=lr)
    ys = np.zeros((4, 4))
    ids, weights = [], []
    for k in range(6):
        # expected bookkeeping: decay, drop the lightest when full, append with weight lr
        w = [v * (1 - lr) for v in weights]
        if len(ids) == 3:
            drop = int(np.argmin(w))
            del ids[drop], w[drop]
        ids.append(k)
        w.append(1.0 if k == 0 else lr)
        weights = list(np.array(w) / sum(w))
        mem.add(np.full((1, 4, 4), float(k)), ys)
        assert len(mem) == min(k + 1, 3)
        assert mem.weights.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(mem.weights, weights, atol=1e-12)
        np.testing.assert_allclose(mem.samples()[:, 0, 0, 0], ids, atol=1e-12)
    with pytest.raises(InvalidArgument):
        fc.SampleMemory(capacity=0)


def test_label_and_window_shapes():
    y = fc.gaussian_label((9, 7), 1.2)
    assert y[4, 3] == 1.0 and y.min() > 0
    w = fc.regularization_window((9, 7), (3, 2), w_min=1e-3, eta=10.0)
    assert w[0, 0] == pytest.approx(1e-3) and w.min() >= 1e-3
    assert fc.label_sigma((10, 10)) == pytest.approx(1.0)
