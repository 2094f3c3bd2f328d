"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from mvr.numcore.params import ParamStore


def grad_check(f, store: ParamStore, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(seed)`` must be a deterministic scalar function of the parameters in
    ``store``: it is re-evaluated at perturbed parameter values, so any
    internal randomness must be fully determined by ``seed``. The error for
    one parameter entry is |analytic - numeric| / max(1, |numeric|); the
    maximum over all entries of all parameters is returned.
    """
    store.zero_grad()
    out = f(seed)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("objective is not finite at the base point")
    out.backward()
    analytic = {name: store.gradient(name).copy() for name in store.names()}

    max_err = 0.0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(seed).data)
            flat[i] = orig - h
            f_minus = float(f(seed).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ana[i] - numeric) / max(1.0, abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
