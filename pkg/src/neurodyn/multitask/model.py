"""Conv stem + transformer encoder with classification, chaos and projection heads."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from neurodyn import autodiff as ad
from neurodyn.errors import ContractError, ParameterError
from neurodyn.multitask.augment import AugmentConfig
from neurodyn.multitask.losses import LossWeights

N_TOKENS = 16
PROJ_DIM = 128


@dataclass(frozen=True)
class MtlConfig:
    d_model: int = 128
    n_heads: int = 4
    ffn_dim: int = 256
    n_layers: int = 2
    dropout: float = 0.1
    stem_kernels: tuple = (5, 3)
    stem_filters: tuple = (32, 64)
    n_tokens: int = N_TOKENS
    proj_dim: int = PROJ_DIM
    weights: LossWeights = field(default_factory=LossWeights)
    tau: float = 0.5
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 30
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ParameterError(f"d_model {self.d_model} must be a positive multiple of n_heads {self.n_heads}")
        if len(self.stem_kernels) != len(self.stem_filters) or any(k % 2 == 0 for k in self.stem_kernels):
            raise ParameterError("stem needs one odd kernel size per filter count")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.tau <= 0 or self.lr <= 0 or self.grad_clip <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("tau, lr, grad_clip and batch_size must be positive; epochs non-negative")
        if min(self.n_layers, self.ffn_dim, self.n_tokens, self.proj_dim, self.lr_step_epochs) < 1:
            raise ParameterError("layer count, widths and lr step must be positive")

    @classmethod
    def toy(cls, **kw):
        """Desk-scale preset used by the tests."""
        return cls(**{"d_model": 32, "n_heads": 2, "ffn_dim": 64, "n_layers": 1, **kw})

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["stem_kernels"], out["stem_filters"] = list(self.stem_kernels), list(self.stem_filters)
        out["weights"] = vars(self.weights).copy()
        out["augment"] = vars(self.augment).copy()
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if isinstance(d.get("augment"), dict):
            d["augment"] = AugmentConfig(**d["augment"])
        for k in ("stem_kernels", "stem_filters"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MtlParams:
    """Named arrays of the model plus the channel count they were built for."""

    arrays: dict
    channels: int
    d_model: int
    n_heads: int
    n_layers: int

    def __post_init__(self):
        arrs = {}
        for k, v in self.arrays.items():
            a = np.array(v, dtype=np.float64)
            a.flags.writeable = False
            arrs[k] = a
        object.__setattr__(self, "arrays", arrs)
        if arrs["stem0_w"].shape[1] != self.channels:
            raise ContractError("stem input width disagrees with channel count")
        if arrs["in_w"].shape[1] != self.d_model:
            raise ContractError("token projection disagrees with d_model")

    def __eq__(self, other):
        if not isinstance(other, MtlParams):
            return NotImplemented
        return (self.meta() == other.meta() and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()))

    __hash__ = None

    def meta(self):
        return {"channels": self.channels, "d_model": self.d_model, "n_heads": self.n_heads,
                "n_layers": self.n_layers}

    def with_arrays(self, arrays):
        return MtlParams(arrays, self.channels, self.d_model, self.n_heads, self.n_layers)


def _dense(rng, n_in, n_out):
    return rng.normal(0.0, math.sqrt(1.0 / n_in), (n_in, n_out)), np.zeros(n_out)


def init_mtl(channels, cfg: MtlConfig, rng=None) -> MtlParams:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    a = {}
    cin = channels
    for i, (k, f) in enumerate(zip(cfg.stem_kernels, cfg.stem_filters)):
        a[f"stem{i}_w"] = rng.normal(0.0, math.sqrt(2.0 / (cin * k)), (f, cin, k))
        a[f"stem{i}_b"] = np.zeros(f)
        cin = f
    d = cfg.d_model
    a["in_w"], a["in_b"] = _dense(rng, cin, d)
    for l in range(cfg.n_layers):
        for name in ("q", "k", "v", "o"):
            a[f"l{l}_{name}"] = rng.normal(0.0, math.sqrt(1.0 / d), (d, d))
        a[f"l{l}_ffn1_w"], a[f"l{l}_ffn1_b"] = _dense(rng, d, cfg.ffn_dim)
        a[f"l{l}_ffn2_w"], a[f"l{l}_ffn2_b"] = _dense(rng, cfg.ffn_dim, d)
        for ln in ("ln1", "ln2"):
            a[f"l{l}_{ln}_g"] = np.ones(d)
            a[f"l{l}_{ln}_b"] = np.zeros(d)
    a["cls1_w"], a["cls1_b"] = _dense(rng, d, d)
    a["cls2_w"], a["cls2_b"] = _dense(rng, d, 2)
    a["chaos1_w"], a["chaos1_b"] = _dense(rng, d, d)
    a["chaos2_w"], a["chaos2_b"] = _dense(rng, d, 1)
    a["proj1_w"], a["proj1_b"] = _dense(rng, d, cfg.proj_dim)
    a["proj2_w"], a["proj2_b"] = _dense(rng, cfg.proj_dim, cfg.proj_dim)
    return MtlParams(a, channels, d, cfg.n_heads, cfg.n_layers)


@lru_cache(maxsize=16)
def positional_encoding(n, d):
    """Sinusoidal table: sin on even columns, cos on odd, wavelengths up to 10^4."""
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    ang = pos / np.power(10_000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : d // 2])
    pe.flags.writeable = False
    return pe


@lru_cache(maxsize=16)
def adaptive_pool_matrix(T, n):
    """(T, n) averaging matrix; bin i spans ``[floor(iT/n), ceil((i+1)T/n))``."""
    if T < 1:
        raise ParameterError("cannot pool an empty sequence")
    P = np.zeros((T, n))
    for i in range(n):
        lo, hi = (i * T) // n, -(-(i + 1) * T // n)
        P[lo:hi, i] = 1.0 / (hi - lo)
    P.flags.writeable = False
    return P


def attention(q, k, v, return_weights=False):
    """Scaled dot-product attention over the last two axes."""
    q, k, v = (x if isinstance(x, ad.Tensor) else ad.constant(x) for x in (q, k, v))
    dk = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    w = ad.softmax(ad.scalar_mul(q @ ad.transpose(k, axes), 1.0 / math.sqrt(dk)), axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


def _dropout(x, rate, rng):
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * ad.constant(keep)


def _layer_norm(x, g, b):
    return ad.layer_norm(x, axis=-1) * g + b


def _mhsa(p, l, x, n_heads):
    B, L, d = x.shape
    dk = d // n_heads

    def split(t):  # (B, L, d) -> (B, H, L, dk)
        return ad.transpose(ad.reshape(t, (B, L, n_heads, dk)), (0, 2, 1, 3))

    q, k, v = (split(x @ p[f"l{l}_{n}"]) for n in ("q", "k", "v"))
    out = ad.reshape(ad.transpose(attention(q, k, v), (0, 2, 1, 3)), (B, L, d))
    return out @ p[f"l{l}_o"]


def encode(p, X, meta, cfg: MtlConfig, rng=None):
    """Pooled (B, d_model) embedding; ``rng`` enables dropout."""
    h = X if isinstance(X, ad.Tensor) else ad.constant(X)
    for i, k in enumerate(cfg.stem_kernels):
        h = ad.relu(ad.conv1d(h, p[f"stem{i}_w"], p[f"stem{i}_b"], padding=k // 2))
    T = h.shape[2]
    h = h @ adaptive_pool_matrix(T, cfg.n_tokens)          # B, F, L
    h = ad.transpose(h, (0, 2, 1)) @ p["in_w"] + p["in_b"]  # B, L, d
    h = h + positional_encoding(cfg.n_tokens, meta["d_model"])
    rate = cfg.dropout
    for l in range(meta["n_layers"]):
        a = _dropout(_mhsa(p, l, h, meta["n_heads"]), rate, rng)
        h = _layer_norm(h + a, p[f"l{l}_ln1_g"], p[f"l{l}_ln1_b"])
        f = ad.relu(h @ p[f"l{l}_ffn1_w"] + p[f"l{l}_ffn1_b"]) @ p[f"l{l}_ffn2_w"] + p[f"l{l}_ffn2_b"]
        h = _layer_norm(h + _dropout(f, rate, rng), p[f"l{l}_ln2_g"], p[f"l{l}_ln2_b"])
    return ad.mean(h, axis=1)


def _head(p, name, e):
    return ad.relu(e @ p[f"{name}1_w"] + p[f"{name}1_b"]) @ p[f"{name}2_w"] + p[f"{name}2_b"]


def heads(p, e):
    return {
        "logits_mi": _head(p, "cls", e),
        "logit_chaos": ad.reshape(_head(p, "chaos", e), (e.shape[0],)),
        "proj": ad.l2_normalize(_head(p, "proj", e), axis=1),
    }


def forward_tensors(p, X, meta, cfg: MtlConfig, rng=None):
    return heads(p, encode(p, X, meta, cfg, rng))


def _check_batch(params: MtlParams, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != params.channels:
        raise ContractError(f"batch of shape {X.shape} does not match {params.channels} channels")
    return X


def mtl_forward(params: MtlParams, batch, cfg: MtlConfig) -> dict:
    """Evaluation-mode forward (no dropout); arrays keyed like the loss expects."""
    X = _check_batch(params, batch)
    out = forward_tensors(params.arrays, X, params.meta(), cfg)
    return {k: v.data.copy() for k, v in out.items()}


def embed(params: MtlParams, batch, cfg: MtlConfig) -> np.ndarray:
    X = _check_batch(params, batch)
    return encode(params.arrays, X, params.meta(), cfg).data.copy()
