"""Adam optimizer and finite-difference gradient checking for parameter dicts."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, frozen=()):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k in frozen:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def gradient_check(loss_fn, params, grads, eps=1e-6, max_entries=None, rng=None):
    """Relative error ``||g_fd - g|| / max(||g_fd||, ||g||)`` per parameter block.

    ``loss_fn()`` must read ``params`` in place.  With ``max_entries`` only a
    random subset of coordinates per block is probed.
    """
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, value in params.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        fd = np.zeros(idx.size)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            fd[n] = (lp - lm) / (2 * eps)
        an = grads[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        errors[name] = float(np.linalg.norm(fd - an) / denom)
    return errors
