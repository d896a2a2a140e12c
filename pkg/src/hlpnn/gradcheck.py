"""Central finite-difference gradient checking."""

from __future__ import annotations

import math

import numpy as np

from .tensor import no_grad


def grad_check(fn, inputs, eps=1e-5, max_coords=None, rng=None, atol=0.0):
    """Largest relative error between tape and finite-difference gradients.

    ``fn`` is a zero-argument callable returning a scalar Tensor built from
    ``inputs`` (float64 tensors with ``requires_grad``). The relative error of
    one coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. When ``max_coords``
    is given, at most that many coordinates per input are probed, picked by
    ``rng``. NaN anywhere yields ``inf``.

    A coordinate whose absolute difference is at most ``atol`` counts as exact.
    This lets deep models be checked where some true gradients sit below the
    round-off floor of the difference quotient (roughly ``1e-16 * |f| / eps``).
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check needs float64 inputs")
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            if not np.shares_memory(flat, t.data):
                raise ValueError("grad_check needs contiguous input arrays")
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                rng = rng if rng is not None else np.random.default_rng(0)
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            a_flat = a.reshape(-1)
            for i in coords:
                old = flat[i]
                flat[i] = old + eps
                up = fn().item()
                flat[i] = old - eps
                down = fn().item()
                flat[i] = old
                numeric = (up - down) / (2.0 * eps)
                diff = abs(a_flat[i] - numeric)
                if math.isnan(diff):
                    return math.inf
                if diff <= atol:
                    continue
                err = diff / max(1e-8, abs(a_flat[i]) + abs(numeric))
                worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
