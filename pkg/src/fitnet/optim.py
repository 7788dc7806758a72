"""Gradient-descent optimizers over named parameters.

Both optimizers clip by global gradient norm before applying the update
(clip_norm=0 disables clipping) and zero every gradient afterwards, so each
step consumes exactly one backward pass.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .tensor import check_unique_names

__all__ = ["Sgd", "Adam", "global_grad_norm", "clip_gradients"]


def global_grad_norm(params):
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def clip_gradients(params, max_norm):
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip norm. max_norm <= 0 disables clipping.
    """
    norm = global_grad_norm(params)
    if max_norm > 0.0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm


class _Optimizer:
    def __init__(self, params, lr, clip_norm=5.0):
        if lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if clip_norm < 0.0:
            raise ConfigError(f"clip_norm must be >= 0, got {clip_norm}")
        self.params = check_unique_names(list(params))
        self.lr = float(lr)
        self.clip_norm = float(clip_norm)
        self.step_count = 0

    def step(self):
        clip_gradients(self.params, self.clip_norm)
        self._apply()
        for p in self.params:
            p.zero_grad()
        self.step_count += 1

    def _apply(self):
        raise NotImplementedError


class Sgd(_Optimizer):
    """Plain gradient descent: w <- w - lr * g."""

    def _apply(self):
        for p in self.params:
            p.data -= self.lr * p.grad


class Adam(_Optimizer):
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=5.0):
        super().__init__(params, lr, clip_norm)
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def _apply(self):
        t = self.step_count + 1
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
