"""Finite-difference gradient checking.

The checker is the independent oracle for every model in this package: it
never touches the reverse-mode path except to read the analytic gradients it
is judging.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import backward, check_unique_names

__all__ = ["grad_check"]


def grad_check(forward, params, eps=1e-5):
    """Compare analytic gradients against central finite differences.

    forward: zero-argument callable rebuilding the scalar loss from the
        current parameter values; it must be deterministic.
    params: parameters to perturb, one coordinate at a time.
    eps: half-width of the central difference (default 1e-5).

    Returns the maximum relative error over all coordinates, where the
    denominator is max(|analytic|, |finite difference|, 1e-8).
    """
    if eps <= 0.0:
        raise ContractError(f"eps must be positive, got {eps}")
    params = check_unique_names(list(params))

    first = forward()
    second = forward()
    if first.data.shape != () or second.data.shape != ():
        raise ContractError("forward must produce a scalar loss")
    if float(first.data) != float(second.data):
        raise ContractError(
            "forward is not deterministic: "
            f"{float(first.data)!r} != {float(second.data)!r} on repeat call"
        )

    backward(second, params)
    analytic = {p.name: p.grad.copy() for p in params}

    max_rel = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        a = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(forward().data)
            flat[i] = saved - eps
            f_minus = float(forward().data)
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a[i]), abs(fd), 1e-8)
            rel = abs(a[i] - fd) / denom
            if rel > max_rel:
                max_rel = rel
    return max_rel
