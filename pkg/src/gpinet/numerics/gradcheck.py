"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from gpinet.numerics.tensor import Tape


def numeric_grad(fn, param, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to ``param.data``."""
    base = param.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for idx in range(base.size):
        bumped = base.copy().reshape(-1)
        orig = bumped[idx]
        bumped[idx] = orig + h
        param.data = bumped.reshape(base.shape)
        up = fn().data[()]
        bumped[idx] = orig - h
        param.data = bumped.reshape(base.shape)
        down = fn().data[()]
        flat[idx] = (up - down) / (2 * h)
    param.data = base
    return grad


def grad_check(fn, params, h=1e-5, floor=1e-8, oracle_dtype=None):
    """Max over parameter entries of ``|a - n| / max(|a|, |n|, floor)``.

    ``fn`` is a zero-argument callable returning a scalar tensor built from
    ``params``; it is called once on a tape for analytic gradients and then
    twice per entry for numeric ones.

    ``oracle_dtype`` (e.g. ``np.longdouble``) evaluates the finite
    differences with every parameter upcast, lowering the oracle's rounding
    floor ``ulp(loss) / 2h`` without touching the analytic path.
    """
    with Tape() as tape:
        loss = fn()
    analytic = tape.backward(loss, params)
    originals = [p.data for p in params]
    if oracle_dtype is not None:
        for p in params:
            p.data = p.data.astype(oracle_dtype)
    worst = 0.0
    try:
        for p, a in zip(params, analytic):
            n = numeric_grad(fn, p, h)
            a = a.astype(n.dtype)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            if a.size:
                worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    finally:
        for p, data in zip(params, originals):
            p.data = data
    return worst
