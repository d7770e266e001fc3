"""Piecewise-linear RNNs and generalized teacher forcing (GTF).

Four latent update rules share one parameter container::

    vanilla          z' = A*z + W2 relu(z) + b0
    dendritic        z' = A*z + W2 sum_j a_j relu(z - h_j) + b0
    shallow          z' = A*z + W2 relu(W3 z + b1) + b0
    clipped_shallow  z' = A*z + W2 [relu(W3 z + b1) - relu(W3 z)] + b0

each plus ``Wx s`` when an external input is supplied. Observations are read
out linearly, ``x = B_obs z``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from neurodyn import autodiff as ad
from neurodyn import kernels
from neurodyn.errors import ContractError, DivergenceError, DomainError, ParameterError, TrainingError
from neurodyn.optim import AdamW
from neurodyn.sigproc import Recording

VARIANTS = ("vanilla", "dendritic", "shallow", "clipped_shallow")
SHALLOW = ("shallow", "clipped_shallow")
RIDGE_GAMMA = 1e-2

# trainable arrays per variant, in checkpoint order
_TRAINABLE = {
    "vanilla": ("A", "W2", "b0", "B_obs"),
    "dendritic": ("A", "W2", "b0", "slopes", "thresholds", "B_obs"),
    "shallow": ("A", "W2", "W3", "b0", "b1", "B_obs"),
    "clipped_shallow": ("A", "W2", "W3", "b0", "b1", "B_obs"),
}
_ARRAYS = ("A", "W2", "W3", "b0", "b1", "Wx", "slopes", "thresholds", "B_obs")


def _vec(x):
    return None if x is None else np.array(x, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class PlrnnParams:
    """Weights of one PLRNN. ``A`` holds the diagonal of the autoregressive matrix."""

    variant: str
    A: np.ndarray
    W2: np.ndarray
    b0: np.ndarray
    B_obs: np.ndarray
    W3: np.ndarray | None = None
    b1: np.ndarray | None = None
    Wx: np.ndarray | None = None
    slopes: np.ndarray | None = None
    thresholds: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown PLRNN variant {self.variant!r}")
        for name in _ARRAYS:
            arr = _vec(getattr(self, name))
            if arr is not None:
                arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        M = self.A.shape[0] if self.A.ndim == 1 else -1
        if M < 1:
            raise ContractError("A must be a non-empty vector")
        self._need(self.b0, (M,), "b0")
        if self.B_obs.ndim != 2 or self.B_obs.shape[1] != M:
            raise ContractError(f"B_obs must be N x {M}, got {self.B_obs.shape}")
        if self.variant in SHALLOW:
            if self.W3 is None or self.b1 is None:
                raise ContractError(f"{self.variant} needs W3 and b1")
            H = self.W3.shape[0]
            self._need(self.W2, (M, H), "W2")
            self._need(self.W3, (H, M), "W3")
            self._need(self.b1, (H,), "b1")
        else:
            self._need(self.W2, (M, M), "W2")
        if self.variant == "dendritic":
            if self.slopes is None or self.thresholds is None or self.slopes.ndim != 1 or self.slopes.size < 1:
                raise ContractError("dendritic variant needs J >= 1 slopes and thresholds")
            self._need(self.thresholds, (self.slopes.size, M), "thresholds")
        if self.Wx is not None and (self.Wx.ndim != 2 or self.Wx.shape[0] != M):
            raise ContractError(f"Wx must be {M} x K, got {self.Wx.shape}")

    @staticmethod
    def _need(arr, shape, name):
        if arr is None or arr.shape != shape:
            got = None if arr is None else arr.shape
            raise ContractError(f"{name} must have shape {shape}, got {got}")

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def H(self):
        return self.W3.shape[0] if self.variant in SHALLOW else self.M

    @property
    def N(self):
        return self.B_obs.shape[0]

    def arrays(self) -> dict:
        """Non-empty arrays by name (the checkpoint payload)."""
        return {n: getattr(self, n) for n in _ARRAYS if getattr(self, n) is not None}

    def trainable(self) -> dict:
        return {n: getattr(self, n) for n in _TRAINABLE[self.variant]}

    def replace(self, **arrays) -> "PlrnnParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(arrays)
        return PlrnnParams(**kw)

    def __eq__(self, other):
        if not isinstance(other, PlrnnParams) or self.variant != other.variant:
            return NotImplemented if not isinstance(other, PlrnnParams) else False
        a, b = self.arrays(), other.arrays()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a)

    __hash__ = None


def init_params(variant, latent_dim, hidden_dim, obs_dim, rng, n_bases=4) -> PlrnnParams:
    """A ~ U(0.5, 0.9), weights N(0, 1/sqrt(H)), zero biases, B_obs = [I | 0]."""
    M, N = latent_dim, obs_dim
    H = hidden_dim if variant in SHALLOW else M
    std = 1.0 / math.sqrt(H)
    A = rng.uniform(0.5, 0.9, M)
    W2 = rng.normal(0.0, std, (M, H))
    kw = {}
    if variant in SHALLOW:
        kw["W3"] = rng.normal(0.0, std, (H, M))
        kw["b1"] = np.zeros(H)
    elif variant == "dendritic":
        kw["slopes"] = np.full(n_bases, 1.0 / n_bases)
        kw["thresholds"] = rng.normal(0.0, 0.5, (n_bases, M))
    return PlrnnParams(variant, A, W2, np.zeros(M), np.eye(N, M), **kw)


# -- single-state dynamics ------------------------------------------------

def _check_state(params, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.M,):
        raise ContractError(f"state must have length {params.M}, got shape {z.shape}")
    return z


def _drive(params, s):
    if s is None:
        return 0.0
    s = np.asarray(s, dtype=np.float64)
    if params.Wx is None or s.shape != (params.Wx.shape[1],):
        raise ContractError(f"input of shape {s.shape} does not match Wx")
    return params.Wx @ s


def _hidden(params, z):
    """Nonlinear term before W2, and its derivative mask (or weighted mask)."""
    v = params.variant
    if v == "vanilla":
        return np.maximum(z, 0.0), (z > 0).astype(np.float64)
    if v == "dendritic":
        shifted = z[None, :] - params.thresholds
        phi = params.slopes @ np.maximum(shifted, 0.0)
        return phi, params.slopes @ (shifted > 0).astype(np.float64)
    pre = params.W3 @ z
    act = pre + params.b1
    phi = np.maximum(act, 0.0)
    d = (act > 0).astype(np.float64)
    if v == "clipped_shallow":
        phi = phi - np.maximum(pre, 0.0)
        d = d - (pre > 0)
    return phi, d


def step(params: PlrnnParams, z, s=None) -> np.ndarray:
    """One latent update ``z -> z'``."""
    z = _check_state(params, z)
    phi, _ = _hidden(params, z)
    return params.A * z + params.W2 @ phi + params.b0 + _drive(params, s)


def jacobian(params: PlrnnParams, z) -> np.ndarray:
    """Analytic ``dz'/dz``. On a ReLU switching surface the inactive branch is used."""
    z = _check_state(params, z)
    _, d = _hidden(params, z)
    if params.variant in SHALLOW:
        core = params.W2 @ (d[:, None] * params.W3)
    else:
        core = params.W2 * d[None, :]
    return np.diag(params.A) + core


def simulate(params: PlrnnParams, z0, inputs=None, T=1000, burn_in=0) -> np.ndarray:
    """Iterate ``step`` for ``burn_in + T`` steps and return the last ``T`` states.

    Row ``k`` of the result is ``z_{burn_in + k + 1}``. ``inputs`` (if given)
    supplies one row per step.
    """
    if T < 1 or burn_in < 0:
        raise ParameterError("simulate needs T >= 1 and burn_in >= 0")
    total = T + burn_in
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < total:
            raise ContractError(f"inputs need {total} rows, got shape {inputs.shape}")
    z = _check_state(params, z0).copy()
    out = np.empty((T, params.M))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(total):
            z = step(params, z, None if inputs is None else inputs[t])
            if not np.all(np.isfinite(z)):
                raise DivergenceError(f"non-finite state at step {t + 1}", step=t + 1)
            if t >= burn_in:
                out[t - burn_in] = z
    return out


def observe(params: PlrnnParams, states) -> np.ndarray:
    return np.asarray(states) @ params.B_obs.T


# -- forcing ----------------------------------------------------------------

def forcing_operators(B_obs, gamma=RIDGE_GAMMA):
    """Projector onto the row space of ``B_obs`` and the ridge pseudo-inverse."""
    U, s, Vt = np.linalg.svd(np.asarray(B_obs, dtype=np.float64), full_matrices=False)
    keep = s > s.max(initial=0.0) * max(B_obs.shape) * np.finfo(float).eps
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    P = Vt.T @ Vt
    Kr = (Vt.T * (s / (s * s + gamma))) @ U.T
    return np.ascontiguousarray(P), np.ascontiguousarray(Kr)


def estimate_forcing_state(params: PlrnnParams, x, z_current, gamma=RIDGE_GAMMA) -> np.ndarray:
    """Replace the observed part of ``z_current`` by the ridge solution for ``x``.

    The component of ``z_current`` in the null space of ``B_obs`` is kept.
    """
    x = np.asarray(x, dtype=np.float64)
    z = _check_state(params, z_current)
    if x.shape != (params.N,):
        raise ContractError(f"observation must have length {params.N}, got shape {x.shape}")
    P, Kr = forcing_operators(params.B_obs, gamma)
    return z - P @ z + Kr @ x


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class GtfConfig:
    alpha: float = 0.1
    interval: int = 5
    seq_len: int = 50
    batch_size: int = 16
    batches_per_epoch: int = 50
    epochs: int = 250
    lr: float = 1e-3
    reg_latent: float = 1e-4
    reg_obs: float = 1e-6
    latent_dim: int = 16
    hidden_dim: int = 128
    seed: int = 0
    variant: str = "clipped_shallow"
    n_bases: int = 4
    gamma: float = RIDGE_GAMMA
    learn_obs: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("interval", "seq_len", "batch_size", "batches_per_epoch", "latent_dim", "hidden_dim", "n_bases"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.seq_len < 2:
            raise ParameterError("seq_len must be at least 2")
        if self.epochs < 0 or self.lr <= 0 or self.reg_latent < 0 or self.reg_obs < 0 or self.gamma <= 0:
            raise ParameterError("epochs, lr, regularization and gamma must be non-negative (lr, gamma > 0)")
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown GTF config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainReport:
    losses: tuple
    params: PlrnnParams
    seed: int
    backend: str
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self):
        return {"losses": list(self.losses), "seed": self.seed, "backend": self.backend,
                "epochs": len(self.losses), "wall_time_s": self.wall_time_s}


def _windows(data):
    if isinstance(data, Recording):
        data = [data]
    elif isinstance(data, np.ndarray):
        data = [data]
    out = []
    for w in data:
        arr = w.data.T if isinstance(w, Recording) else np.asarray(w, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        out.append(np.ascontiguousarray(arr, dtype=np.float64))
    if not out:
        raise ParameterError("no training windows")
    n = {w.shape[1] for w in out}
    if len(n) != 1:
        raise ContractError("training windows disagree on channel count")
    return out


def _tape_step(variant, p, z):
    if variant in SHALLOW:
        pre = z @ ad.transpose(p["W3"])
        phi = ad.relu(pre + p["b1"])
        if variant == "clipped_shallow":
            phi = phi - ad.relu(pre)
    elif variant == "vanilla":
        phi = ad.relu(z)
    else:
        J, M = p["thresholds"].shape
        shifted = ad.reshape(z, (z.shape[0], 1, M)) - p["thresholds"]
        phi = ad.sum(ad.relu(shifted) * ad.reshape(p["slopes"], (1, J, 1)), axis=1)
    return p["A"] * z + phi @ ad.transpose(p["W2"]) + p["b0"]


def gtf_loss_grad_tape(variant, arrays, X, alpha, interval, gamma=RIDGE_GAMMA):
    """Observation MSE of a forced batch and its gradients via the autodiff tape.

    Works for every variant; the data branch of the forcing mix is a constant.
    """
    Bt, T, N = X.shape
    P, Kr = forcing_operators(arrays["B_obs"], gamma)
    norm = float((T - 1) * N * Bt)
    with ad.Tape() as tape:
        p = {k: tape.watch(v) for k, v in arrays.items()}
        z = ad.constant(X[:, 0] @ Kr.T)
        sse = 0.0
        for t in range(1, T):
            zn = _tape_step(variant, p, z)
            e = zn @ ad.transpose(p["B_obs"]) - X[:, t]
            sse = ad.sum(ad.square(e)) + sse
            if alpha != 0.0 and t % interval == 0:
                zhat = zn.data - zn.data @ P + X[:, t] @ Kr.T
                z = ad.constant(alpha * zhat) + (1.0 - alpha) * zn
            else:
                z = zn
        loss = sse / norm
        grads = tape.gradient(loss, [p[k] for k in arrays])
    return loss.item(), dict(zip(arrays, grads))


def gtf_loss_grad(variant, arrays, X, alpha, interval, gamma=RIDGE_GAMMA, backend=None):
    """Dispatch to the compiled kernel (shallow variants) or the tape."""
    if variant not in SHALLOW or backend == "tape":
        return gtf_loss_grad_tape(variant, arrays, X, alpha, interval, gamma)
    P, Kr = forcing_operators(arrays["B_obs"], gamma)
    impl = kernels.get_backend(backend)
    out = impl.bptt_shallow(arrays["A"], arrays["W2"], arrays["W3"], arrays["b0"], arrays["b1"],
                            arrays["B_obs"], P, Kr, np.ascontiguousarray(X), float(alpha),
                            int(interval), variant == "clipped_shallow")
    names = ("A", "W2", "W3", "b0", "b1", "B_obs")
    return out[0], dict(zip(names, out[1:]))


def gtf_train(data, cfg: GtfConfig = GtfConfig(), backend=None, init: PlrnnParams | None = None):
    """Fit a PLRNN to observation windows with forced BPTT.

    ``data`` is a Recording, an array (T x N), or a list of either. Returns
    ``(params, report)``; ``report.losses`` holds the mean observation MSE of
    each epoch.
    """
    wins = _windows(data)
    N = wins[0].shape[1]
    short = [w.shape[0] for w in wins if w.shape[0] < cfg.seq_len]
    if short:
        raise ParameterError(f"window of length {short[0]} is shorter than seq_len {cfg.seq_len}")
    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else init_params(
        cfg.variant, cfg.latent_dim, cfg.hidden_dim, N, rng, cfg.n_bases)
    if init is not None and init.N != N:
        raise ContractError("initial params disagree with the data's channel count")
    names = list(_TRAINABLE[params.variant])
    if not cfg.learn_obs:
        names.remove("B_obs")
    arrays = {k: np.array(v) for k, v in params.trainable().items()}
    opt = AdamW(lr=cfg.lr)
    used = "tape" if params.variant not in SHALLOW or backend == "tape" else (backend or kernels.BACKEND)
    limits = np.array([w.shape[0] - cfg.seq_len + 1 for w in wins])
    losses = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(cfg.batches_per_epoch):
            which = rng.integers(0, len(wins), cfg.batch_size)
            starts = rng.integers(0, limits[which])
            X = np.stack([wins[w][s:s + cfg.seq_len] for w, s in zip(which, starts)])
            try:
                loss, grads = gtf_loss_grad(params.variant, arrays, X, cfg.alpha, cfg.interval,
                                            cfg.gamma, None if used == "tape" else used)
            except (FloatingPointError, DomainError) as exc:
                raise TrainingError(f"training diverged in epoch {epoch}: {exc}", epoch=epoch) from exc
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            step_grads = {}
            for k in names:
                reg = cfg.reg_obs if k == "B_obs" else cfg.reg_latent
                step_grads[k] = grads[k] + 2.0 * reg * arrays[k]
            try:
                arrays.update(opt.step({k: arrays[k] for k in names}, step_grads))
            except TrainingError as exc:
                raise TrainingError(f"{exc} (epoch {epoch})", epoch=epoch) from exc
            total += loss
        losses.append(total / cfg.batches_per_epoch)
    fitted = params.replace(**arrays)
    report = TrainReport(tuple(losses), fitted, cfg.seed, used, time.perf_counter() - t0)
    return fitted, report
