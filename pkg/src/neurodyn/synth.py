"""Seeded synthetic signals and a labeled toy corpus.

Motor-imagery classes are encoded by the dominant frequency (10 Hz for
"real", 25 Hz for "imagery"); chaos labels come from construction, by adding
either a chaotic map component or a smooth sinusoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from neurodyn.errors import ParameterError
from neurodyn.sigproc import Recording

KINDS = ("sine", "sum_of_sines", "logistic_map", "henon", "noisy_sine")
MI_CLASSES = ("real", "imagery")
MI_FREQS_HZ = {"real": 10.0, "imagery": 25.0}
TRANSIENT = 1000
HENON_BOUND = 1.5


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    params: dict = field(default_factory=dict)
    channels: int = 1
    duration_samples: int = 320
    sample_rate_hz: float = 160.0
    noise_sigma: float = 0.0
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown signal kind {self.kind!r}")
        if self.channels < 1 or self.duration_samples < 1:
            raise ParameterError("channels and duration must be positive")
        if self.sample_rate_hz <= 0 or self.noise_sigma < 0 or self.amplitude < 0:
            raise ParameterError("sample rate must be positive; noise and amplitude non-negative")

    @property
    def sigma(self) -> float:
        """Additive noise level; ``noisy_sine`` defaults to 0.05 when unset."""
        if self.kind == "noisy_sine" and self.noise_sigma == 0:
            return float(self.params.get("sigma", 0.05))
        return self.noise_sigma

    def bound(self) -> float:
        """Declared bound on ``|x|``, noise included."""
        if self.kind == "sum_of_sines":
            base = float(np.sum(np.abs(self.params.get("amplitudes", [self.amplitude]))))
        elif self.kind == "henon":
            base = HENON_BOUND * self.amplitude
        else:
            base = self.amplitude
        return base + 6.0 * self.sigma


def logistic_orbit(x0, n, r=4.0, transient=TRANSIENT):
    if not 0.0 < r <= 4.0:
        raise ParameterError(f"logistic r must lie in (0, 4], got {r}")
    x = float(x0)
    out = np.empty(n)
    for i in range(transient + n):
        x = r * x * (1.0 - x)
        if i >= transient:
            out[i - transient] = x
    return out


def henon_orbit(xy0, n, a=1.4, b=0.3, transient=TRANSIENT):
    if not (1.0 <= a <= 1.4 and 0.0 < b <= 0.3):
        raise ParameterError(f"Henon parameters (a={a}, b={b}) outside the bounded-attractor range")
    x, y = float(xy0[0]), float(xy0[1])
    out = np.empty(n)
    for i in range(transient + n):
        x, y = 1.0 - a * x * x + y, b * x
        if i >= transient:
            out[i - transient] = x
    return out


def gen_signal(spec: SynthSpec) -> Recording:
    """Deterministic C x T recording for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    T, C = spec.duration_samples, spec.channels
    t = np.arange(T) / spec.sample_rate_hz
    phases = rng.uniform(0, 2 * np.pi, C) if p.get("random_phase", False) else np.zeros(C)
    data = np.empty((C, T))
    for c in range(C):
        if spec.kind in ("sine", "noisy_sine"):
            data[c] = spec.amplitude * np.sin(2 * np.pi * p.get("freq_hz", 10.0) * t + phases[c])
        elif spec.kind == "sum_of_sines":
            freqs = p.get("freqs_hz", [10.0])
            amps = p.get("amplitudes", [spec.amplitude] * len(freqs))
            if len(freqs) != len(amps):
                raise ParameterError("freqs_hz and amplitudes differ in length")
            data[c] = sum(a * np.sin(2 * np.pi * f * t + phases[c]) for f, a in zip(freqs, amps))
        elif spec.kind == "logistic_map":
            data[c] = spec.amplitude * logistic_orbit(rng.uniform(0.05, 0.95), T, p.get("r", 4.0))
        else:
            data[c] = spec.amplitude * henon_orbit(rng.uniform(-0.1, 0.1, 2), T, p.get("a", 1.4), p.get("b", 0.3))
    sigma = spec.sigma
    if sigma > 0:
        data += np.clip(rng.normal(0.0, sigma, data.shape), -6 * sigma, 6 * sigma)
    names = tuple(f"ch{c}" for c in range(C))
    return Recording(names, spec.sample_rate_hz, data, {"kind": spec.kind, "seed": spec.seed})


@dataclass(frozen=True)
class Trial:
    recording: Recording
    mi_label: str
    chaos_label: str
    source: str
    index: int

    @property
    def mi_class(self) -> int:
        return MI_CLASSES.index(self.mi_label)

    @property
    def chaos_class(self) -> int:
        return int(self.chaos_label == "chaotic")


def gen_corpus(n_per_class, window_spec=None, seed=0, channels=4, sample_rate_hz=160.0,
               noise_sigma=0.05, secondary_amplitude=0.5) -> list[Trial]:
    """Balanced toy corpus of ``2 * n_per_class`` trials.

    Each index ``i`` yields one "real" and one "imagery" trial, exactly one of
    which is chaotic, so both label marginals are balanced. Chaotic trials add
    a zero-mean logistic or Henon component; non-chaotic ones add a 4 Hz
    sinusoid of equal amplitude.
    """
    if n_per_class < 1:
        raise ParameterError("n_per_class must be >= 1")
    length = 160 if window_spec is None else int(window_spec.length_samples)
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate_hz
    trials = []
    for i in range(n_per_class):
        for k, cls in enumerate(MI_CLASSES):
            chaotic = (i + k) % 2 == 1
            phase = rng.uniform(0, 2 * np.pi, (channels, 1))
            base = np.sin(2 * np.pi * MI_FREQS_HZ[cls] * t + phase)
            if chaotic:
                source = "logistic_map" if (i // 2) % 2 == 0 else "henon"
                if source == "logistic_map":
                    comp = np.stack([2.0 * logistic_orbit(rng.uniform(0.05, 0.95), length) - 1.0
                                     for _ in range(channels)])
                else:
                    comp = np.stack([henon_orbit(rng.uniform(-0.1, 0.1, 2), length) / HENON_BOUND
                                     for _ in range(channels)])
            else:
                source = "sine"
                comp = np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi, (channels, 1)))
            noise = np.clip(rng.normal(0.0, noise_sigma, (channels, length)), -6 * noise_sigma, 6 * noise_sigma)
            data = base + secondary_amplitude * comp + noise
            rec = Recording(tuple(f"ch{c}" for c in range(channels)), sample_rate_hz, data,
                            {"trial": len(trials), "mi_label": cls})
            trials.append(Trial(rec, cls, "chaotic" if chaotic else "non_chaotic", source, len(trials)))
    return trials


def corpus_manifest(trials) -> list[dict]:
    return [{"index": tr.index, "mi_label": tr.mi_label, "chaos_label": tr.chaos_label, "source": tr.source}
            for tr in trials]
