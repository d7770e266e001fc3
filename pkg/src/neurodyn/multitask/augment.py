"""Stochastic EEG views for contrastive training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from neurodyn.errors import ParameterError


@dataclass(frozen=True)
class AugmentConfig:
    jitter_sigma: float = 0.008
    scale_sigma: float = 0.03
    mask_frac: float = 0.05
    mask_prob: float = 0.5
    chdrop_p: float = 0.12
    chdrop_prob: float = 0.3
    light_mode: bool = False

    def __post_init__(self):
        if self.jitter_sigma < 0 or self.scale_sigma < 0:
            raise ParameterError("augmentation sigmas must be non-negative")
        for name in ("mask_frac", "mask_prob", "chdrop_p", "chdrop_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def light(cls):
        return cls(light_mode=True)


def augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One random view of a C x T window.

    Jitter, then per-channel scaling, then (unless ``light_mode``) a zeroed
    time segment and random channel dropout. Draws from ``rng`` in a fixed
    order so a view is reproducible from the generator state.
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"augment expects a C x T window, got shape {x.shape}")
    C, T = x.shape
    out = x + rng.normal(0.0, cfg.jitter_sigma, x.shape) if cfg.jitter_sigma > 0 else x.copy()
    if cfg.scale_sigma > 0:
        out *= 1.0 + rng.normal(0.0, cfg.scale_sigma, (C, 1))
    if cfg.light_mode:
        return out
    width = int(np.floor(cfg.mask_frac * T))
    if width > 0 and rng.random() < cfg.mask_prob:
        start = int(rng.integers(0, T - width + 1))
        out[:, start:start + width] = 0.0
    if cfg.chdrop_p > 0 and rng.random() < cfg.chdrop_prob:
        out[rng.random(C) < cfg.chdrop_p] = 0.0
    return out


def augment_batch(X, cfg: AugmentConfig, rng) -> np.ndarray:
    return np.stack([augment(x, cfg, rng) for x in X])
