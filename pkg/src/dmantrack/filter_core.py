"""Cost-sensitive correlation filter learning on a discrete periodic grid.

Conventions
-----------
Features ``x`` are real arrays ``(D, N1, N2)``; filters are held as their
unnormalized 2-D DFT coefficients ``f_hat`` with the same shape.  The score
map of a sample is the multi-channel circular convolution

    S_f{x} = sum_d ifft2(fft2(x^d) * f_hat^d)

The learner minimizes

    E(f) = sum_j alpha_j ||q_j * (S_f{x_j} - y_j)||^2 + sum_d ||w * f^d||^2

whose normal equations in the Fourier domain read
``((QA)^H Gamma (QA) + W^H W) f_hat = (QA)^H Gamma Q y_hat`` with ``Q`` and
``W`` the Fourier-domain operators of pointwise multiplication by ``q`` and
``w``.  Both are applied matrix-free through transform round-trips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .imaging import InvalidArgument

Q_EPS = 1e-12


class NumericFailure(RuntimeError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


def fft2(a):
    return sfft.fft2(a, axes=(-2, -1))


def ifft2(a):
    return sfft.ifft2(a, axes=(-2, -1))


def hermitian_part(a):
    """Projection of spectra onto those of real grids: ``(a(k) + conj(a(-k))) / 2``."""
    flipped = np.roll(a[..., ::-1, ::-1], 1, axis=(-2, -1))
    return 0.5 * (a + np.conj(flipped))


def _data(x):
    return getattr(x, "data", x)


def apply_filter(f_hat, x) -> np.ndarray:
    """Confidence map of filter ``f_hat`` on feature stack ``x``."""
    x = np.asarray(_data(x))
    if x.shape != np.shape(f_hat):
        raise InvalidArgument(f"filter shape {np.shape(f_hat)} does not match features {x.shape}")
    return np.real(ifft2((fft2(x) * f_hat).sum(axis=0)))


def spatial_filter(f_hat) -> np.ndarray:
    return ifft2(f_hat)


def gaussian_label(grid, sigma, center=None) -> np.ndarray:
    """Periodic Gaussian with unit peak at ``center`` (default: grid center)."""
    n1, n2 = grid
    if center is None:
        center = (n1 // 2, n2 // 2)
    d1 = np.abs(np.arange(n1) - center[0])
    d1 = np.minimum(d1, n1 - d1)
    d2 = np.abs(np.arange(n2) - center[1])
    d2 = np.minimum(d2, n2 - d2)
    return np.exp(-(d1[:, None] ** 2 + d2[None, :] ** 2) / (2.0 * sigma ** 2))


def label_sigma(target_cells) -> float:
    return float(np.sqrt(target_cells[0] * target_cells[1]) / 10.0)


def regularization_window(grid, target_cells, w_min=1e-3, eta=10.0) -> np.ndarray:
    """Quadratic spatial penalty, smallest at the filter origin (periodic distance).

    Distances are normalized by the target extent on the grid.
    """
    n1, n2 = grid
    d1 = np.arange(n1)
    d1 = np.minimum(d1, n1 - d1) / max(target_cells[0], 1e-12)
    d2 = np.arange(n2)
    d2 = np.minimum(d2, n2 - d2) / max(target_cells[1], 1e-12)
    return w_min + eta * (d1[:, None] ** 2 + d2[None, :] ** 2)


def modulating_factor(f_prev, x, y, eps=Q_EPS) -> np.ndarray:
    """Per-location loss weight ``|r / max|r||^2`` with ``r = S_{f_prev}{x} - y``.

    Falls back to all-ones without a previous filter or for a vanishing residual.
    """
    y = np.asarray(y, dtype=np.float64)
    if f_prev is None:
        return np.ones_like(y)
    r = apply_filter(f_prev, x) - y
    peak = np.abs(r).max()
    if not np.isfinite(peak) or peak < eps:
        return np.ones_like(y)
    return (r / peak) ** 2


def modulating_factors(f_prev, x_hat, y, eps=Q_EPS) -> np.ndarray:
    """Vectorized :func:`modulating_factor` over sample spectra ``(M, D, N1, N2)``."""
    y = np.asarray(y, dtype=np.float64)
    if f_prev is None:
        return np.ones_like(y)
    r = np.real(ifft2((x_hat * f_prev).sum(axis=1))) - y
    peak = np.abs(r).max(axis=(1, 2), keepdims=True)
    ok = np.isfinite(peak) & (peak >= eps)
    q = np.ones_like(y)
    np.divide(r, peak, out=q, where=ok)
    return np.where(ok, q ** 2, 1.0)


class SampleMemory:
    """Bounded training set with exponentially decaying sample weights."""

    def __init__(self, capacity=30, learning_rate=0.0125):
        if capacity < 1:
            raise InvalidArgument("sample memory capacity must be >= 1")
        self.capacity = capacity
        self.learning_rate = learning_rate
        self.x_hat: list[np.ndarray] = []
        self.labels: list[np.ndarray] = []
        self.weights = np.zeros(0)

    def __len__(self):
        return len(self.x_hat)

    def add(self, x, y):
        x_hat = fft2(np.asarray(_data(x), dtype=np.float64))
        if not self.x_hat:
            weights = np.array([1.0])
            self.x_hat.append(x_hat)
            self.labels.append(np.asarray(y, dtype=np.float64))
        else:
            weights = self.weights * (1.0 - self.learning_rate)
            if len(self.x_hat) >= self.capacity:
                drop = int(np.argmin(weights))
                del self.x_hat[drop]
                del self.labels[drop]
                weights = np.delete(weights, drop)
            self.x_hat.append(x_hat)
            self.labels.append(np.asarray(y, dtype=np.float64))
            weights = np.append(weights, self.learning_rate)
        self.weights = weights / weights.sum()

    def samples(self):
        return np.real(ifft2(np.stack(self.x_hat)))


@dataclass
class NormalSystem:
    """Operands of the (cost-sensitive) normal equations.

    ``x_hat``: ``(M, D, N1, N2)`` sample spectra; ``y``: ``(M, N1, N2)`` spatial
    labels; ``alpha``: ``(M,)`` weights; ``w``: ``(N1, N2)`` regularization
    window; ``q``: ``(M, N1, N2)`` modulating factors, used only when
    ``cost_sensitive`` is set.
    """

    x_hat: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    w: np.ndarray
    q: np.ndarray | None = None
    cost_sensitive: bool = True

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=np.complex128)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        M, D, n1, n2 = self.x_hat.shape
        if self.y.shape != (M, n1, n2) or self.alpha.shape != (M,) or self.w.shape != (n1, n2):
            raise InvalidArgument("inconsistent normal-system dimensions")
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=np.float64)
            if self.q.shape != (M, n1, n2):
                raise InvalidArgument("modulating factor shape mismatch")
        self._xc_weighted = np.conj(self.x_hat) * self.alpha[:, None, None, None]

    @classmethod
    def from_memory(cls, memory: SampleMemory, w, q=None, cost_sensitive=True):
        return cls(np.stack(memory.x_hat), np.stack(memory.labels), memory.weights, w, q, cost_sensitive)

    @property
    def shape(self):
        return self.x_hat.shape[1:]

    @property
    def q_sq(self):
        if self.cost_sensitive and self.q is not None:
            return self.q ** 2
        return None

    def rhs(self) -> np.ndarray:
        q_sq = self.q_sq
        target = self.y if q_sq is None else q_sq * self.y
        return _back_project(self, fft2(target))


def _forward(system, v_hat):
    """``A v_hat``: per-sample score spectra ``(M, N1, N2)``."""
    return (system.x_hat * v_hat[None]).sum(axis=1)


def _back_project(system, s_hat):
    """``A^H Gamma s_hat``: weighted conjugate-sample correlation, summed over samples."""
    return (system._xc_weighted * s_hat[:, None]).sum(axis=0)


def normal_apply(system: NormalSystem, v_hat) -> np.ndarray:
    """Left-hand operator ``((QA)^H Gamma (QA) + W^H W) v_hat``."""
    v_hat = np.asarray(v_hat)
    if v_hat.shape != system.shape:
        raise InvalidArgument(f"vector shape {v_hat.shape} does not match system {system.shape}")
    s_hat = _forward(system, v_hat)
    q_sq = system.q_sq
    w_sq = system.w ** 2
    if q_sq is None:
        return _back_project(system, s_hat) + fft2(w_sq * ifft2(v_hat))
    # one transform pair for both the weighted scores and the penalty term
    M = s_hat.shape[0]
    spatial = ifft2(np.concatenate([s_hat, v_hat]))
    spatial[:M] *= q_sq
    spatial[M:] *= w_sq
    back = fft2(spatial)
    return _back_project(system, back[:M]) + back[M:]


def objective_value(system: NormalSystem, f_hat) -> float:
    """Discrete objective: weighted data term plus spatial regularization."""
    f_hat = np.asarray(f_hat)
    resid = ifft2(_forward(system, f_hat)) - system.y
    if system.cost_sensitive and system.q is not None:
        resid = system.q * resid
    data = np.einsum("m,mxy->", system.alpha, np.abs(resid) ** 2)
    reg = np.sum(np.abs(system.w * ifft2(f_hat)) ** 2)
    return float(data + reg)


@dataclass
class CGResult:
    f_hat: np.ndarray
    iterations: int
    residuals: list
    converged: bool


def solve_filter(system: NormalSystem, max_iter=100, tol=1e-5, warm_start=None, callback=None) -> CGResult:
    """Conjugate gradient on the normal equations.

    Stops when ``||r|| <= tol * ||b||`` or after ``max_iter`` iterations.
    ``callback(k, f_hat)`` is invoked with the initial point (k=0) and after
    every iteration.  Residuals are projected onto real-grid spectra so that
    rounding cannot build up an imaginary part in the spatial filter.
    """
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    b = hermitian_part(system.rhs())
    if warm_start is None:
        f = np.zeros_like(b)
        r = b.copy()
    else:
        f = hermitian_part(np.asarray(warm_start, dtype=np.complex128))
        r = hermitian_part(b - normal_apply(system, f))
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return CGResult(np.zeros_like(b), 0, [0.0], True)
    p = r.copy()
    rr = np.vdot(r, r).real
    residuals = [np.sqrt(rr) / b_norm]
    if callback is not None:
        callback(0, f)
    k = 0
    converged = residuals[-1] <= tol
    while not converged and k < max_iter:
        k += 1
        Hp = normal_apply(system, p)
        pHp = np.vdot(p, Hp).real
        if not np.isfinite(pHp) or pHp <= 0:
            raise NumericFailure(f"CG breakdown (p^H H p = {pHp})", iteration=k)
        step = rr / pHp
        f = f + step * p
        r = hermitian_part(r - step * Hp)
        rr_new = np.vdot(r, r).real
        if not np.isfinite(rr_new):
            raise NumericFailure("non-finite residual in CG", iteration=k)
        p = r + (rr_new / rr) * p
        rr = rr_new
        residuals.append(np.sqrt(rr) / b_norm)
        if callback is not None:
            callback(k, f)
        converged = residuals[-1] <= tol
    return CGResult(f, k, residuals, converged)
