"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from neurodyn.errors import DimensionError, TrainingError

_MAX_STEPS = 2**53


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def adamw_step(param, grad, state: OptimState, hyper: AdamWHyper = AdamWHyper()):
    """One AdamW update; returns ``(new_param, new_state)`` without mutating inputs.

    Decay is applied first (``p * (1 - lr * wd)``), then the bias-corrected
    Adam step.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or state.m.shape != param.shape or state.v.shape != param.shape:
        raise DimensionError(f"adamw: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("adamw: non-finite gradient")
    if state.t >= _MAX_STEPS:
        raise TrainingError("adamw: step counter overflow")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad * grad
    mhat = m / (1.0 - hyper.beta1**t)
    vhat = v / (1.0 - hyper.beta2**t)
    p = param * (1.0 - hyper.lr * hyper.weight_decay)
    p = p - hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)
    return p, OptimState(m, v, t)


@dataclass
class AdamW:
    """Stateful wrapper applying :func:`adamw_step` to a dict of named arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    state: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        hyper = AdamWHyper(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)
        out = {}
        for name, p in params.items():
            st = self.state.get(name) or OptimState.zeros_like(p)
            out[name], self.state[name] = adamw_step(p, grads[name], st, hyper)
        return out


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingError("non-finite gradient norm")
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {k: g * scale for k, g in grads.items()}, norm
