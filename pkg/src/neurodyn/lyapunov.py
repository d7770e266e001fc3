"""Lyapunov spectra of discrete maps, Kaplan-Yorke dimension and regime labels.

The spectrum is computed by evolving an orthonormal tangent frame alongside
the trajectory and re-orthogonalizing it with QR, accumulating ``log r_ii``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from neurodyn import kernels
from neurodyn.errors import DegenerateError, DivergenceError, ParameterError
from neurodyn.plrnn import SHALLOW, PlrnnParams, forcing_operators
from neurodyn.plrnn import jacobian as plrnn_jacobian
from neurodyn.plrnn import step as plrnn_step

EPSILON = 0.01
REGIMES = ("chaotic", "periodic", "quasiperiodic", "no_attractor")


@dataclass(frozen=True)
class MapSystem:
    """A discrete map ``z -> step(z)`` with its Jacobian."""

    step: Callable
    jacobian: Callable
    dim: int
    name: str = "map"


class PlrnnSystem(MapSystem):
    """PLRNN as a map; shallow variants run through the compiled kernel."""

    def __init__(self, params: PlrnnParams):
        super().__init__(lambda z: plrnn_step(params, z), lambda z: plrnn_jacobian(params, z),
                         params.M, f"plrnn-{params.variant}")
        object.__setattr__(self, "params", params)


def logistic_map(r=4.0) -> MapSystem:
    return MapSystem(lambda z: r * z * (1.0 - z), lambda z: np.array([[r * (1.0 - 2.0 * z[0])]]),
                     1, f"logistic(r={r})")


def henon_map(a=1.4, b=0.3) -> MapSystem:
    def step(z):
        return np.array([1.0 - a * z[0] * z[0] + z[1], b * z[0]])

    def jac(z):
        return np.array([[-2.0 * a * z[0], 1.0], [b, 0.0]])

    return MapSystem(step, jac, 2, f"henon(a={a}, b={b})")


def linear_map(matrix) -> MapSystem:
    L = np.array(matrix, dtype=np.float64)
    L.flags.writeable = False
    return MapSystem(lambda z: L @ z, lambda z: L, L.shape[0], "linear")


def rotation_map(theta=0.5) -> MapSystem:
    c, s = math.cos(theta), math.sin(theta)
    return linear_map([[c, -s], [s, c]])


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: np.ndarray  # descending, nats/step
    steps_used: int
    burn_in: int
    qr_interval: int

    @property
    def lambda_max(self) -> float:
        return float(self.exponents[0])

    @property
    def total(self) -> float:
        return float(np.sum(self.exponents))

    def __eq__(self, other):
        if not isinstance(other, LyapunovSpectrum):
            return NotImplemented
        return (np.array_equal(self.exponents, other.exponents) and self.steps_used == other.steps_used
                and self.burn_in == other.burn_in and self.qr_interval == other.qr_interval)

    __hash__ = None


def _finish(sums, T, burn_in, qr_interval):
    exps = np.sort(np.asarray(sums, dtype=np.float64) / (T - burn_in))[::-1].copy()
    if not np.all(np.isfinite(exps)):
        raise DivergenceError("non-finite Lyapunov exponent")
    exps.flags.writeable = False
    return LyapunovSpectrum(exps, T - burn_in, burn_in, qr_interval)


def spectrum(system: MapSystem, z0, T=10_000, burn_in=None, qr_interval=1, backend=None) -> LyapunovSpectrum:
    """Full Lyapunov spectrum from ``T`` steps, the first ``burn_in`` discarded.

    ``burn_in`` defaults to 10% of ``T``. The tangent frame starts at the
    identity and is re-orthogonalized every ``qr_interval`` steps (every step
    during burn-in). Raises DivergenceError on a non-finite state or Jacobian
    and DegenerateError when the frame collapses (``r_ii == 0``).
    """
    T = int(T)
    burn_in = T // 10 if burn_in is None else int(burn_in)
    if not 0 <= burn_in < T:
        raise ParameterError(f"need 0 <= burn_in < T, got burn_in={burn_in}, T={T}")
    if qr_interval < 1:
        raise ParameterError("qr_interval must be >= 1")
    z = np.array(z0, dtype=np.float64).reshape(-1)
    if z.size != system.dim:
        raise ParameterError(f"z0 has {z.size} entries, system dimension is {system.dim}")

    params = getattr(system, "params", None)
    if params is not None and params.variant in SHALLOW and params.Wx is None:
        impl = kernels.get_backend(backend)
        try:
            sums, _ = impl.lyapunov_shallow(params.A, params.W2, params.W3, params.b0, params.b1, z,
                                            T, burn_in, int(qr_interval), params.variant == "clipped_shallow")
        except FloatingPointError as exc:
            raise DivergenceError(f"trajectory diverged at step {exc.args[1]}", step=exc.args[1]) from None
        except ZeroDivisionError as exc:
            raise DegenerateError(f"tangent frame collapsed at step {exc.args[1]}") from None
        return _finish(sums, T, burn_in, qr_interval)

    if system.dim == 1:
        return _finish([_scalar_sum(system, z, T, burn_in, qr_interval)], T, burn_in, qr_interval)

    M = system.dim
    Q = np.eye(M)
    sums = np.zeros(M)
    since = 0
    for t in range(T):
        J = np.asarray(system.jacobian(z), dtype=np.float64)
        if not np.all(np.isfinite(J)):
            raise DivergenceError(f"non-finite Jacobian at step {t}", step=t)
        Y = J @ Q
        z = np.asarray(system.step(z), dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite state at step {t + 1}", step=t + 1)
        since += 1
        if t < burn_in or since >= qr_interval or t == T - 1:
            Q, R = np.linalg.qr(Y)
            r = np.diag(R)
            if np.any(r == 0.0):
                raise DegenerateError(f"tangent frame collapsed at step {t + 1}")
            Q = Q * np.sign(r)
            if t >= burn_in:
                sums += np.log(np.abs(r))
            since = 0
        else:
            Q = Y
    return _finish(sums, T, burn_in, qr_interval)


def _scalar_sum(system, z, T, burn_in, qr_interval):
    # One-dimensional tangent space: the frame is a scalar, so QR reduces to
    # renormalizing a running product.
    acc = 0.0
    stretch = 1.0
    since = 0
    for t in range(T):
        d = float(np.asarray(system.jacobian(z)).reshape(-1)[0])
        z = np.asarray(system.step(z), dtype=np.float64)
        if not (math.isfinite(d) and math.isfinite(float(z[0]))):
            raise DivergenceError(f"non-finite state or derivative at step {t + 1}", step=t + 1)
        stretch *= d
        since += 1
        if t < burn_in or since >= qr_interval or t == T - 1:
            if stretch == 0.0:
                raise DegenerateError(f"tangent frame collapsed at step {t + 1}")
            if t >= burn_in:
                acc += math.log(abs(stretch))
            stretch = 1.0
            since = 0
    return acc


def plrnn_spectrum(params: PlrnnParams, z0=None, x0=None, T=10_000, burn_in=None, qr_interval=1, backend=None):
    """Spectrum of a fitted PLRNN.

    The start state is ``z0``, else the ridge inference of observation ``x0``,
    else the origin.
    """
    if z0 is None:
        if x0 is not None:
            _, Kr = forcing_operators(params.B_obs)
            z0 = Kr @ np.asarray(x0, dtype=np.float64).reshape(-1)
        else:
            z0 = np.zeros(params.M)
    return spectrum(PlrnnSystem(params), z0, T, burn_in, qr_interval, backend)


def benettin_lambda_max(step, z0, T=100_000, burn_in=1000, d0=1e-8, seed=0) -> float:
    """Largest exponent from two nearby trajectories, renormalized every step.

    Independent of any Jacobian; used as a cross-check for :func:`spectrum`.
    """
    rng = np.random.default_rng(seed)
    z = np.array(z0, dtype=np.float64).reshape(-1)
    for _ in range(burn_in):
        z = np.asarray(step(z), dtype=np.float64)
    u = rng.normal(size=z.size)
    w = z + d0 * u / np.linalg.norm(u)
    acc = 0.0
    for _ in range(T):
        z = np.asarray(step(z), dtype=np.float64)
        w = np.asarray(step(w), dtype=np.float64)
        d = float(np.linalg.norm(w - z))
        if d == 0.0 or not math.isfinite(d):
            raise DegenerateError("trajectories merged or diverged")
        acc += math.log(d / d0)
        w = z + (w - z) * (d0 / d)
    return acc / T


def _exponents(spec):
    if isinstance(spec, LyapunovSpectrum):
        return np.asarray(spec.exponents, dtype=np.float64)
    return np.sort(np.asarray(spec, dtype=np.float64).reshape(-1))[::-1]


def kaplan_yorke(spec) -> float:
    """``j + S_j / |lambda_{j+1}|`` with ``j`` the last index where the prefix sum ``S_j >= 0``.

    Returns 0 when even ``lambda_1 < 0`` and ``M`` when every prefix sum is
    non-negative.
    """
    lam = _exponents(spec)
    M = lam.size
    prefix = np.cumsum(lam)
    nonneg = np.flatnonzero(prefix >= 0)
    if nonneg.size == 0:
        return 0.0
    j = int(nonneg[-1]) + 1
    if j == M:
        return float(M)
    nxt = lam[j]
    if nxt == 0.0:
        raise DegenerateError("Kaplan-Yorke dimension undefined: next exponent is exactly 0")
    return j + float(prefix[j - 1]) / abs(nxt)


@dataclass(frozen=True)
class RegimeLabel:
    regime: str
    chaos_binary: str
    lambda_max: float
    lambda_sum: float
    epsilon_used: float


def classify(spec, epsilon=EPSILON) -> RegimeLabel:
    """Regime from the largest exponent and the exponent sum.

    A non-negative sum means no attractor; otherwise the largest exponent is
    compared against the band ``[-epsilon, epsilon]``.
    """
    lam = _exponents(spec)
    lmax, total = float(lam[0]), float(np.sum(lam))
    if total >= 0:
        regime = "no_attractor"
    elif lmax > epsilon:
        regime = "chaotic"
    elif lmax < -epsilon:
        regime = "periodic"
    else:
        regime = "quasiperiodic"
    binary = "chaotic" if regime == "chaotic" else "non_chaotic"
    return RegimeLabel(regime, binary, lmax, total, float(epsilon))


def report(spec, epsilon=EPSILON) -> dict:
    """JSON-ready summary of a spectrum."""
    lam = _exponents(spec)
    label = classify(lam, epsilon)
    try:
        ky = kaplan_yorke(lam)
    except DegenerateError:
        ky = None
    return {
        "exponents": [float(x) for x in lam],
        "lambda_max": label.lambda_max,
        "sum": label.lambda_sum,
        "ky_dimension": ky,
        "regime": label.regime,
        "chaos_binary": label.chaos_binary,
        "epsilon": label.epsilon_used,
    }
