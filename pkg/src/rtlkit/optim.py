"""Learnable-parameter store, Adam updates, and a finite-difference checker."""
from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Tensor
from .errors import InvalidParameterError, TrainingDivergedError


def _named_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-parameter stream: identical across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class ParamStore:
    """Named value/gradient arrays plus Adam moment state.

    Values, gradients and moments share one dtype: float32 for training,
    float64 for gradient-check mode.  Gradients accumulate across backward
    passes until an optimizer step zeroes them.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.values = {}
        self.grads = {}
        self.m = {}
        self.v = {}
        self.trainable = {}
        self.step = 0

    def names(self):
        return list(self.values)

    def add(self, name: str, value: np.ndarray, trainable: bool = True):
        if name in self.values:
            raise InvalidParameterError(f"parameter {name!r} already registered")
        # force C order so flat views of the stored array are real views
        arr = np.array(value, dtype=self.dtype, order="C")
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.trainable[name] = bool(trainable)
        return arr

    def add_he_uniform(self, name: str, fan_in: int, fan_out: int, seed: int, gain: float = 1.0):
        """Weight matrix with uniform fan-in scaled init; bound gain * sqrt(6/fan_in)."""
        bound = gain * np.sqrt(6.0 / fan_in)
        rng = _named_rng(seed, name)
        return self.add(name, rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def add_zeros(self, name: str, shape):
        return self.add(name, np.zeros(shape))

    def add_small_uniform(self, name: str, shape, seed: int, bound: float = 0.05):
        rng = _named_rng(seed, name)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def add_scaled_normal(self, name: str, shape, scale: float, seed: int):
        rng = _named_rng(seed, name)
        return self.add(name, scale * rng.standard_normal(shape))

    def add_orthonormal_rows(self, name: str, rows: int, dim: int, seed: int, trainable=True):
        """Rows of a random orthonormal frame; falls back to scaled Gaussian when rows > dim."""
        rng = _named_rng(seed, name)
        if rows <= dim:
            q, _ = np.linalg.qr(rng.standard_normal((dim, rows)))
            value = q.T
        else:
            value = rng.standard_normal((rows, dim)) / np.sqrt(dim)
        return self.add(name, value, trainable=trainable)

    def leaves(self) -> dict:
        """Fresh graph leaves for one forward pass; constants when not trainable."""
        return {
            name: Tensor(value, requires_grad=self.trainable[name])
            for name, value in self.values.items()
        }

    def accumulate(self, leaves: dict):
        """Fold gradients from a backward pass into the store."""
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                self.grads[name] += leaf.grad

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0

    def snapshot(self) -> dict:
        return {name: value.copy() for name, value in self.values.items()}


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update over all trainable parameters.

    Gradients are zeroed afterwards; a NaN gradient aborts with the offending
    parameter named.
    """
    store.step += 1
    t = store.step
    for name in store.names():
        if not store.trainable[name]:
            continue
        g = store.grads[name]
        if np.isnan(g).any():
            raise TrainingDivergedError(f"NaN gradient in {name!r} at step {t}")
        store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = store.m[name] / (1 - beta1**t)
        v_hat = store.v[name] / (1 - beta2**t)
        store.values[name] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(store.dtype)
    store.zero_grads()


def grad_check(
    loss_closure,
    store: ParamStore,
    h: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_closure(leaves)` must build a scalar-loss Tensor from the given
    graph leaves.  Every scalar parameter is probed, or a random subsample
    when the parameter count exceeds `max_coords` (at least a handful per
    parameter either way).  Intended for float64 stores.

    Coordinates that look bad at the base step are re-probed at larger and
    smaller steps and the best estimate wins: genuine backward bugs stay
    put as h changes, while subtractive-cancellation noise on tiny
    gradients falls off as h grows and kink-straddling artifacts (a relu
    input within h of zero) vanish as h shrinks.
    """
    leaves = store.leaves()
    loss = loss_closure(leaves)
    loss.backward()
    analytic = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    }

    def probe(value, where, step):
        original = value[where]
        value[where] = original + step
        up = float(loss_closure(store.leaves()).data)
        value[where] = original - step
        down = float(loss_closure(store.leaves()).data)
        value[where] = original
        return (up - down) / (2 * step)

    total = sum(v.size for v in store.values.values())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, value in store.values.items():
        if total > max_coords:
            quota = max(5, int(max_coords * value.size / total))
            coords = rng.choice(value.size, size=min(quota, value.size), replace=False)
        else:
            coords = np.arange(value.size)
        a_flat = analytic[name].reshape(-1)
        for idx in coords:
            where = np.unravel_index(idx, value.shape)
            a = float(a_flat[idx])
            err = None
            for step in (h, 10 * h, 100 * h, h / 10, h / 100):
                numeric = probe(value, where, step)
                cand = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                err = cand if err is None else min(err, cand)
                if err <= 1e-7:
                    break
            worst = max(worst, err)
    return worst
