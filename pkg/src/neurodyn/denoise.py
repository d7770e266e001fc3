"""1-D convolutional denoising autoencoder and reconstruction metrics.

Encoder: conv(C->H, k5) ReLU conv(H->L, k5) ReLU. Decoder mirrors it with a
linear output layer. All convolutions use symmetric padding 2, so output and
input lengths match. Training minimizes ``alpha * SmoothL1 + beta * spectral``
between the reconstruction of a noise-corrupted window and the clean window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import get_window

from neurodyn import autodiff as ad
from neurodyn.errors import ContractError, DimensionError, DomainError, ParameterError, TrainingError
from neurodyn.optim import AdamW
from neurodyn.sigproc import Recording

KERNEL = 5
PAD = 2
LAYERS = ("enc1", "enc2", "dec1", "dec2")


@dataclass(frozen=True)
class StftConfig:
    window: int = 64
    hop: int = 16
    p: float = 1.0

    def __post_init__(self):
        if self.window < 2 or self.hop < 1 or self.p not in (1, 2):
            raise ParameterError("STFT needs window >= 2, hop >= 1 and p in {1, 2}")


@dataclass(frozen=True)
class DaeConfig:
    latent_channels: int = 32
    hidden_channels: int = 32
    noise_sigma: float = 0.05
    alpha: float = 0.8
    beta: float = 0.2
    smoothl1_delta: float = 1.0
    stft: StftConfig = field(default_factory=StftConfig)
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.latent_channels < 1 or self.hidden_channels < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("channel counts and batch size must be positive, epochs non-negative")
        if self.noise_sigma < 0 or self.alpha < 0 or self.beta < 0 or self.lr <= 0 or self.weight_decay < 0:
            raise ParameterError("noise, loss weights and weight decay must be non-negative; lr positive")
        if self.smoothl1_delta <= 0:
            raise ParameterError("smoothl1_delta must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("stft"), dict):
            d["stft"] = StftConfig(**d["stft"])
        return cls(**d)

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["stft"] = {"window": self.stft.window, "hop": self.stft.hop, "p": self.stft.p}
        return out


@dataclass(frozen=True, eq=False)
class DaeParams:
    """Conv weights ``{layer}_w`` (Cout, Cin, K) and biases ``{layer}_b``."""

    arrays: dict

    def __post_init__(self):
        arrs = {}
        for name in LAYERS:
            w = np.array(self.arrays[f"{name}_w"], dtype=np.float64)
            b = np.array(self.arrays[f"{name}_b"], dtype=np.float64)
            if w.ndim != 3 or w.shape[2] % 2 == 0 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {name}: bad shapes {w.shape}, {b.shape}")
            w.flags.writeable = False
            b.flags.writeable = False
            arrs[f"{name}_w"], arrs[f"{name}_b"] = w, b
        chain = [arrs[f"{n}_w"] for n in LAYERS]
        for a, b in zip(chain, chain[1:]):
            if a.shape[0] != b.shape[1]:
                raise ContractError("consecutive conv layers disagree on channel count")
        if chain[0].shape[1] != chain[-1].shape[0]:
            raise ContractError("decoder output channels must equal encoder input channels")
        object.__setattr__(self, "arrays", arrs)

    @property
    def channels(self):
        return self.arrays["enc1_w"].shape[1]

    def __eq__(self, other):
        if not isinstance(other, DaeParams):
            return NotImplemented
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())

    __hash__ = None


def init_dae(channels, cfg: DaeConfig = DaeConfig(), rng=None) -> DaeParams:
    """He-normal conv weights (plain 1/fan-in variance for the output layer), zero biases."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dims = [channels, cfg.hidden_channels, cfg.latent_channels, cfg.hidden_channels, channels]
    arrays = {}
    for i, name in enumerate(LAYERS):
        cin, cout = dims[i], dims[i + 1]
        gain = 1.0 if name == "dec2" else 2.0
        arrays[f"{name}_w"] = rng.normal(0.0, math.sqrt(gain / (cin * KERNEL)), (cout, cin, KERNEL))
        arrays[f"{name}_b"] = np.zeros(cout)
    return DaeParams(arrays)


def _forward(p, x):
    """Batched forward on tensors; ``x`` is (B, C, T)."""
    h = ad.relu(ad.conv1d(x, p["enc1_w"], p["enc1_b"], padding=PAD))
    h = ad.relu(ad.conv1d(h, p["enc2_w"], p["enc2_b"], padding=PAD))
    h = ad.relu(ad.conv1d(h, p["dec1_w"], p["dec1_b"], padding=PAD))
    return ad.conv1d(h, p["dec2_w"], p["dec2_b"], padding=PAD)


def dae_forward(params: DaeParams, x) -> np.ndarray:
    """Reconstruction of ``x`` (C x T, or B x C x T); same shape as the input."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != params.channels:
        raise ContractError(f"input with shape {np.shape(x)} does not match {params.channels} channels")
    out = _forward(params.arrays, ad.constant(arr)).data
    return out[0].copy() if single else out.copy()


def denoise_recording(params: DaeParams, rec: Recording) -> Recording:
    return rec.with_data(dae_forward(params, rec.data), denoised=True)


# -- losses ------------------------------------------------------------------

def smooth_l1(pred, target, delta=1.0):
    """Mean Huber-style loss: ``0.5 x^2 / delta`` inside ``|x| < delta``, ``|x| - delta/2`` outside."""
    if delta <= 0:
        raise ParameterError("smooth_l1 needs delta > 0")
    pred = pred if isinstance(pred, ad.Tensor) else ad.constant(pred)
    target = target if isinstance(target, ad.Tensor) else ad.constant(target)
    if pred.shape != target.shape:
        raise DimensionError(f"smooth_l1: shapes {pred.shape} and {target.shape} differ")
    x = pred - target
    a = ad.abs(x)
    quad = ad.scalar_mul(ad.square(x), 0.5 / delta)
    lin = a - 0.5 * delta
    inside = ad.constant((a.data < delta).astype(np.float64))
    return ad.mean(inside * quad + (1.0 - inside) * lin)


@lru_cache(maxsize=32)
def stft_matrix(T, window, hop):
    """(T, F * 2K) matrix mapping a signal to the real and imaginary parts of its frames.

    Columns are ordered frame-major, real bins then imaginary bins. ``K = window // 2 + 1``.
    """
    if T < window:
        raise ParameterError(f"signal of {T} samples is shorter than the STFT window {window}")
    F = 1 + (T - window) // hop
    K = window // 2 + 1
    w = get_window("hann", window)
    n = np.arange(window)[:, None]
    k = np.arange(K)[None, :]
    ang = 2 * np.pi * n * k / window
    basis = np.concatenate([w[:, None] * np.cos(ang), -w[:, None] * np.sin(ang)], axis=1)  # (W, 2K)
    G = np.zeros((T, F, 2 * K))
    for f in range(F):
        G[f * hop:f * hop + window, f, :] = basis
    G = G.reshape(T, F * 2 * K)
    G.flags.writeable = False
    return G


def stft_magnitude(x, cfg: StftConfig = StftConfig()):
    """|STFT| of a (..., T) tensor, shaped (..., F, K)."""
    x = x if isinstance(x, ad.Tensor) else ad.constant(x)
    T = x.shape[-1]
    G = stft_matrix(T, cfg.window, cfg.hop)
    K = cfg.window // 2 + 1
    F = G.shape[1] // (2 * K)
    lead = x.shape[:-1]
    coef = ad.reshape(ad.reshape(x, (-1, T)) @ G, lead + (F, 2 * K))
    re = ad.slice(coef, (Ellipsis, slice(0, K)))
    im = ad.slice(coef, (Ellipsis, slice(K, 2 * K)))
    return ad.sqrt(ad.square(re) + ad.square(im))


def spectral_loss(pred, target, cfg: StftConfig = StftConfig()):
    """Mean ``| |STFT(pred)| - |STFT(target)| |^p`` over channels, frames and bins."""
    pred = pred if isinstance(pred, ad.Tensor) else ad.constant(pred)
    target = target if isinstance(target, ad.Tensor) else ad.constant(target)
    if pred.shape != target.shape:
        raise DimensionError(f"spectral_loss: shapes {pred.shape} and {target.shape} differ")
    diff = ad.abs(stft_magnitude(pred, cfg) - stft_magnitude(target, cfg))
    return ad.mean(diff) if cfg.p == 1 else ad.mean(ad.square(diff))


def dae_loss(params_tensors, noisy, clean, cfg: DaeConfig):
    recon = _forward(params_tensors, noisy)
    target = ad.constant(clean)
    return (ad.scalar_mul(smooth_l1(recon, target, cfg.smoothl1_delta), cfg.alpha)
            + ad.scalar_mul(spectral_loss(recon, target, cfg.stft), cfg.beta))


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class DaeReport:
    losses: tuple
    seed: int
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self):
        return {"losses": list(self.losses), "seed": self.seed, "epochs": len(self.losses),
                "wall_time_s": self.wall_time_s}


def _stack_windows(clean):
    if isinstance(clean, Recording):
        clean = [clean]
    arrs = [w.data if isinstance(w, Recording) else np.asarray(w, dtype=np.float64) for w in clean]
    if not arrs:
        raise ParameterError("dae_train needs at least one window")
    arrs = [a[None] if a.ndim == 1 else a for a in arrs]
    if len({a.shape for a in arrs}) != 1:
        raise DimensionError("all training windows must share one shape")
    return np.stack(arrs)


def dae_train(clean, cfg: DaeConfig = DaeConfig(), init: DaeParams | None = None):
    """Fit the autoencoder to reconstruct clean windows from Gaussian-corrupted copies.

    Returns ``(params, report)``; ``report.losses`` holds the mean composite
    loss per epoch.
    """
    X = _stack_windows(clean)
    rng = np.random.default_rng(cfg.seed)
    params = init_dae(X.shape[1], cfg, rng) if init is None else init
    if params.channels != X.shape[1]:
        raise ContractError("initial params disagree with the data's channel count")
    if X.shape[2] < cfg.stft.window:
        raise ParameterError(f"windows of {X.shape[2]} samples are shorter than the STFT window")
    arrays = dict(params.arrays)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            batch = X[order[s:s + cfg.batch_size]]
            noisy = batch + rng.normal(0.0, cfg.noise_sigma, batch.shape) if cfg.noise_sigma > 0 else batch
            try:
                with ad.Tape() as tape:
                    p = {k: tape.watch(v) for k, v in arrays.items()}
                    loss = dae_loss(p, ad.constant(noisy), batch, cfg)
                    if not math.isfinite(loss.item()):
                        raise TrainingError("non-finite loss", epoch=epoch)
                    grads = tape.gradient(loss, [p[k] for k in arrays])
                arrays = opt.step(arrays, dict(zip(arrays, grads)))
            except (DomainError, TrainingError) as exc:
                raise TrainingError(f"DAE training failed in epoch {epoch}: {exc}", epoch=epoch) from exc
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append(total / count)
    return DaeParams(arrays), DaeReport(tuple(losses), cfg.seed, time.perf_counter() - t0)


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class ReconMetrics:
    hellinger: float
    rmse: float
    wasserstein1: float
    mae: float

    def to_dict(self):
        return {"hellinger": self.hellinger, "rmse": self.rmse,
                "wasserstein1": self.wasserstein1, "mae": self.mae}


def recon_metrics(x, y, bins=64) -> ReconMetrics:
    """Distribution and pointwise distances between two equal-length channels."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ContractError(f"recon_metrics: lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise ContractError("recon_metrics needs at least 2 samples")
    d = x - y
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    if hi > lo:
        p, _ = np.histogram(x, bins=bins, range=(lo, hi))
        q, _ = np.histogram(y, bins=bins, range=(lo, hi))
        hell = float(np.linalg.norm(np.sqrt(p / x.size) - np.sqrt(q / y.size)) / math.sqrt(2.0))
    else:
        hell = 0.0
    return ReconMetrics(hell, float(np.sqrt(np.mean(d * d))),
                        float(np.mean(np.abs(np.sort(x) - np.sort(y)))), float(np.mean(np.abs(d))))


def recording_metrics(raw: Recording, recon: Recording) -> dict:
    """ReconMetrics per channel name."""
    if raw.data.shape != recon.data.shape:
        raise ContractError("recordings differ in shape")
    return {name: recon_metrics(raw.data[c], recon.data[c]) for c, name in enumerate(raw.channel_names)}
