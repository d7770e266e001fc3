"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from neurodyn.autodiff import Tape, Tensor
from neurodyn.errors import DomainError


def _scalar(y) -> float:
    val = float(np.asarray(y.data if isinstance(y, Tensor) else y).reshape(-1)[0])
    if not np.isfinite(val):
        raise DomainError("grad_check: non-finite function value")
    return val


def numerical_gradient(f, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f(Tensor(x)))
        flat[i] = orig - step
        fm = _scalar(f(Tensor(x)))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def analytic_gradient(f, x):
    with Tape() as tape:
        xt = tape.watch(x)
        y = f(xt)
    _scalar(y)
    return tape.gradient(y, xt)


def grad_check(f, x, step=1e-5) -> float:
    """Max over coordinates of ``|analytic - fd| / max(1, |fd|)``."""
    ga = analytic_gradient(f, x)
    gn = numerical_gradient(f, x, step)
    if ga.size == 0:
        return 0.0
    return float(np.max(np.abs(ga - gn) / np.maximum(1.0, np.abs(gn))))


def grad_check_params(f, params: dict, step=1e-5) -> dict:
    """Check ``f(params_as_tensors) -> scalar`` w.r.t. every named array.

    Returns the max relative error per parameter name.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    with Tape() as tape:
        watched = {k: tape.watch(v) for k, v in params.items()}
        y = f(watched)
    _scalar(y)
    grads = tape.gradient(y, list(watched.values()))
    errors = {}
    for (name, value), ga in zip(params.items(), grads):
        def f_one(t, name=name):
            others = {k: (t if k == name else Tensor(v)) for k, v in params.items()}
            return f(others)
        gn = numerical_gradient(f_one, value, step)
        errors[name] = float(np.max(np.abs(ga - gn) / np.maximum(1.0, np.abs(gn)))) if ga.size else 0.0
    return errors
