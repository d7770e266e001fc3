"""Recording container and classical EEG signal processing.

Filtering and spectral estimation delegate to :mod:`scipy.signal`; the
feature functions (SNR, Hjorth, autocorrelation, band power) are plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from neurodyn.errors import DegenerateError, DimensionError, EmptyResultError, ParameterError

CANONICAL_BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 70.0),
}


@dataclass(frozen=True)
class Recording:
    """Channel-major (C x T) float64 samples with names and a sample rate."""

    channel_names: tuple
    sample_rate_hz: float
    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise DimensionError(f"recording data must be C x T, got shape {data.shape}")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != data.shape[0]:
            raise DimensionError(f"{len(names)} channel names for {data.shape[0]} channels")
        if data.shape[1] < 1:
            raise DimensionError("recording needs at least one sample")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate_hz}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @classmethod
    def from_array(cls, data, sample_rate_hz, channel_names=None, **meta):
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if channel_names is None:
            channel_names = [f"ch{i}" for i in range(data.shape[0])]
        return cls(tuple(channel_names), sample_rate_hz, data, dict(meta))

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def nyquist(self):
        return self.sample_rate_hz / 2.0

    def with_data(self, data, **meta):
        merged = {**self.meta, **meta}
        return replace(self, data=data, meta=merged)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.channel_names == other.channel_names
                and self.sample_rate_hz == other.sample_rate_hz
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class Band:
    lo_hz: float
    hi_hz: float

    def validate(self, sample_rate_hz):
        if not (0 <= self.lo_hz < self.hi_hz):
            raise ParameterError(f"invalid band [{self.lo_hz}, {self.hi_hz}]")
        if self.hi_hz > sample_rate_hz / 2.0:
            raise ParameterError(f"band edge {self.hi_hz} Hz exceeds Nyquist {sample_rate_hz / 2} Hz")


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray  # C x F, signal^2 / Hz
    segment_len: int
    overlap_frac: float


@dataclass(frozen=True)
class WindowSpec:
    length_samples: int
    overlap_frac: float = 0.0

    def __post_init__(self):
        if self.length_samples < 1:
            raise ParameterError("window length must be positive")
        if not 0.0 <= self.overlap_frac < 1.0:
            raise ParameterError("overlap must lie in [0, 1)")

    @property
    def stride(self):
        return max(1, int(math.floor(self.length_samples * (1.0 - self.overlap_frac))))


def _as_band(band):
    return band if isinstance(band, Band) else Band(*band)


def minmax_normalize(rec: Recording) -> Recording:
    """Map each channel to [0, 1]; constant channels become zeros.

    Indices of constant channels are listed in ``meta['constant_channels']``.
    """
    lo = rec.data.min(axis=1, keepdims=True)
    hi = rec.data.max(axis=1, keepdims=True)
    span = hi - lo
    const = span[:, 0] == 0
    out = np.where(span > 0, (rec.data - lo) / np.where(span > 0, span, 1.0), 0.0)
    return rec.with_data(out, constant_channels=[int(i) for i in np.flatnonzero(const)])


def design_bandpass(band, sample_rate_hz, order=4):
    """Second-order sections of a Butterworth band-pass (low-pass when lo == 0)."""
    band = _as_band(band)
    band.validate(sample_rate_hz)
    if band.hi_hz >= sample_rate_hz / 2.0:
        raise ParameterError(f"band edge {band.hi_hz} Hz must lie below Nyquist")
    if band.lo_hz == 0:
        return sps.butter(order, band.hi_hz, btype="lowpass", fs=sample_rate_hz, output="sos")
    return sps.butter(order, [band.lo_hz, band.hi_hz], btype="bandpass", fs=sample_rate_hz, output="sos")


def bandpass(rec: Recording, band, order=4) -> Recording:
    """Zero-phase Butterworth band-pass applied forward and backward."""
    sos = design_bandpass(band, rec.sample_rate_hz, order)
    padlen = min(3 * (2 * len(sos) + 1), rec.n_samples - 1)
    out = sps.sosfiltfilt(sos, rec.data, axis=1, padlen=padlen)
    return rec.with_data(out)


def welch_psd(rec: Recording, segment_len=256, overlap=0.5) -> PsdEstimate:
    """One-sided Welch PSD with Hann segments and density scaling.

    Each segment is mean-detrended before windowing.
    """
    if rec.n_samples < segment_len:
        raise ParameterError(f"{rec.n_samples} samples is shorter than segment length {segment_len}")
    if not 0.0 <= overlap < 1.0:
        raise ParameterError("overlap must lie in [0, 1)")
    noverlap = int(segment_len * overlap)
    freqs, power = sps.welch(rec.data, fs=rec.sample_rate_hz, window="hann", nperseg=segment_len,
                             noverlap=noverlap, detrend="constant", scaling="density",
                             return_onesided=True, axis=1)
    return PsdEstimate(freqs, np.maximum(power, 0.0), segment_len, overlap)


def band_power(psd: PsdEstimate, band) -> np.ndarray:
    """Per-channel trapezoidal integral of the PSD over ``[lo, hi]``."""
    band = _as_band(band)
    mask = (psd.freqs_hz >= band.lo_hz) & (psd.freqs_hz <= band.hi_hz)
    if np.count_nonzero(mask) < 2:
        raise ParameterError(f"band [{band.lo_hz}, {band.hi_hz}] Hz covers fewer than two PSD bins")
    return np.trapezoid(psd.power[:, mask], psd.freqs_hz[mask], axis=1)


def total_power(psd: PsdEstimate) -> np.ndarray:
    return np.trapezoid(psd.power, psd.freqs_hz, axis=1)


def snr_db(signal, estimate) -> float:
    """``10 log10(sum(est^2) / sum((sig - est)^2))``.

    Returns ``+inf`` when the inputs coincide and ``-inf`` when the estimate
    has zero energy; callers treat infinities as sentinels.
    """
    s = np.asarray(signal, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if s.shape != e.shape:
        raise DimensionError(f"snr_db: lengths {s.shape} and {e.shape} differ")
    resid = float(np.sum((s - e) ** 2))
    power = float(np.sum(e * e))
    if resid == 0.0:
        return math.inf
    if power == 0.0:
        return -math.inf
    return 10.0 * math.log10(power / resid)


def threshold_channels(rec: Recording, estimates, theta_db=8.0) -> Recording:
    """Keep channels whose SNR against ``estimates`` is at least ``theta_db``."""
    est = estimates.data if isinstance(estimates, Recording) else np.asarray(estimates, dtype=np.float64)
    if est.shape != rec.data.shape:
        raise DimensionError(f"estimates {est.shape} not aligned with recording {rec.data.shape}")
    snrs = [snr_db(rec.data[c], est[c]) for c in range(rec.n_channels)]
    keep = [c for c, v in enumerate(snrs) if v >= theta_db]
    if not keep:
        raise EmptyResultError(f"no channel reaches {theta_db} dB")
    return Recording(tuple(rec.channel_names[c] for c in keep), rec.sample_rate_hz, rec.data[keep],
                     {**rec.meta, "snr_db": [snrs[c] for c in keep], "kept_channels": keep})


def autocorrelation(channel, max_lag) -> np.ndarray:
    """Biased autocorrelation normalized to 1 at lag 0."""
    x = np.asarray(channel, dtype=np.float64)
    n = x.size
    if not 0 <= max_lag < n:
        raise ParameterError(f"max_lag must lie in [0, {n})")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise DegenerateError("autocorrelation of a constant signal")
    return np.array([np.dot(x[: n - k], x[k:]) for k in range(max_lag + 1)]) / denom


@dataclass(frozen=True)
class Hjorth:
    activity: float
    mobility: float
    complexity: float


def hjorth(channel) -> Hjorth:
    x = np.asarray(channel, dtype=np.float64)
    if x.size < 3:
        raise ParameterError("hjorth needs at least 3 samples")
    dx = np.diff(x)
    ddx = np.diff(dx)
    var_x, var_dx, var_ddx = x.var(), dx.var(), ddx.var()
    if var_x == 0 or var_dx == 0:
        raise DegenerateError("hjorth parameters undefined for a constant signal")
    mobility = math.sqrt(var_dx / var_x)
    return Hjorth(float(var_x), mobility, math.sqrt(var_ddx / var_dx) / mobility)


def segment_windows(rec: Recording, spec: WindowSpec) -> list[Recording]:
    """Overlapping fixed-length windows; the trailing partial window is dropped."""
    if spec.length_samples > rec.n_samples:
        raise ParameterError(f"window of {spec.length_samples} exceeds {rec.n_samples} samples")
    starts = range(0, rec.n_samples - spec.length_samples + 1, spec.stride)
    return [rec.with_data(rec.data[:, s:s + spec.length_samples], window_start=s) for s in starts]
