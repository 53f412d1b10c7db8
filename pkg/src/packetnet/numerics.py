"""Dense float64 primitives shared by every model in the package.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
Random draws come from :class:`numpy.random.Generator` (PCG64), which is
stable across platforms for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .errors import ConfigurationError, TrainingError

ADAMW_DEFAULTS = dict(beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ConfigurationError(f"matvec shape mismatch: {m.shape} x {v.shape}")
    return m @ v


def sigmoid(z):
    # exp of a non-positive argument only, so no overflow warnings at saturation
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(z):
    return np.maximum(z, 0.0)


def activations(v, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return np.tanh(np.asarray(v, dtype=np.float64))
    if kind == "relu":
        return relu(np.asarray(v, dtype=np.float64))
    raise ConfigurationError(f"unknown activation {kind!r}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, label: int):
    """Cross-entropy of ``softmax(logits)`` against a class index.

    Returns ``(loss, probs, grad_logits)``; the gradient is ``probs - onehot``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(-log_probs[label]), probs, grad


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamWState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))


def adamw_step(param, grad, state: AdamWState, lr: float, beta1=0.9, beta2=0.999,
               eps=1e-8, weight_decay=0.01, instance: int | None = None):
    """In-place decoupled-weight-decay Adam update; returns ``param``."""
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ConfigurationError(f"adamw shape mismatch: {param.shape} vs {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient", instance=instance)
    state.step += 1
    flat = (param.reshape(1, -1), grad.reshape(1, -1), state.m.reshape(1, -1),
            state.v.reshape(1, -1))
    adamw_rows(*flat, [state.step], lr, beta1, beta2, eps, weight_decay)
    return param


def adamw_rows(params, grads, m, v, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.01):
    """AdamW on a batch of independent parameter rows, each with its own step count.

    ``params``, ``grads``, ``m``, ``v`` have shape ``(B, P)``; ``steps`` is the
    per-row step count *after* incrementing. Arrays are modified in place.
    """
    params *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    # scalar pow per row: numpy's vectorised pow may round differently from libm
    bc1 = np.array([[1.0 - beta1 ** float(n)] for n in steps])
    bc2 = np.array([[1.0 - beta2 ** float(n)] for n in steps])
    params -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@njit(cache=True)
def _adamw_bank_kernel(params, grads, m, v, steps, rows, lr, beta1, beta2, eps, decay):
    for k in range(rows.shape[0]):
        r = rows[k]
        steps[r] += 1
        n = float(steps[r])
        bc1 = 1.0 - beta1 ** n
        bc2 = 1.0 - beta2 ** n
        for j in range(params.shape[1]):
            g = grads[k, j]
            p = params[r, j] * decay
            mj = beta1 * m[r, j] + (1.0 - beta1) * g
            vj = beta2 * v[r, j] + (1.0 - beta2) * g * g
            m[r, j] = mj
            v[r, j] = vj
            params[r, j] = p - lr * (mj / bc1) / (np.sqrt(vj / bc2) + eps)


def adamw_bank(params, grads, m, v, steps, rows, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.01):
    """AdamW applied in place to ``params[rows]`` with per-row step counters.

    Same arithmetic as :func:`adamw_rows` without gathering the rows;
    ``steps[rows]`` is incremented.
    """
    _adamw_bank_kernel(params, np.ascontiguousarray(grads), m, v, steps,
                       np.asarray(rows, dtype=np.int64), float(lr), float(beta1),
                       float(beta2), float(eps), 1.0 - lr * weight_decay)


def init_params(rng: np.random.Generator, rows: int, cols: int,
                scheme: str = "uniform_scaled", fan_in: int | None = None) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ConfigurationError("init_params needs positive dimensions")
    if scheme == "zeros":
        return np.zeros((rows, cols))
    if scheme == "uniform_scaled":
        bound = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
        return rng.uniform(-bound, bound, size=(rows, cols))
    raise ConfigurationError(f"unknown init scheme {scheme!r}")


def finite_diff_grad(f: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    theta = np.array(params, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(theta)
        flat[i] = orig - eps
        down = f(theta)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(theta.shape)
