import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurodyn.errors import ParameterError
from neurodyn.synth import (
    KINDS, MI_CLASSES, SynthSpec, corpus_manifest, gen_corpus, gen_signal, henon_orbit, logistic_orbit,
)
from neurodyn.tagging import permutation_entropy


def test_sine_periods_and_peak():
    x = gen_signal(SynthSpec("sine", {"freq_hz": 10.0}, duration_samples=320)).data[0]
    # 20 periods of 16 samples each
    np.testing.assert_allclose(x.reshape(20, 16), np.tile(x[:16], (20, 1)), atol=1e-12)
    assert abs(np.abs(x).max() - 1.0) < 1e-12
    amp = gen_signal(SynthSpec("sine", amplitude=2.5)).data
    assert abs(np.abs(amp).max() - 2.5) < 1e-12


def test_logistic_stays_in_unit_interval():
    x = gen_signal(SynthSpec("logistic_map", channels=3, duration_samples=5000, seed=4)).data
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert x.std() > 0.2  # not collapsed onto a fixed point


def test_map_orbits_drop_transient():
    full = logistic_orbit(0.3, 10, transient=0)
    assert np.array_equal(logistic_orbit(0.3, 5, transient=5), full[5:])
    assert np.all(np.abs(henon_orbit([0.0, 0.0], 2000)) <= 1.5)


def test_bad_map_parameters():
    with pytest.raises(ParameterError):
        gen_signal(SynthSpec("logistic_map", {"r": 4.5}))
    with pytest.raises(ParameterError):
        gen_signal(SynthSpec("henon", {"a": 2.0}))
    with pytest.raises(ParameterError):
        SynthSpec("square")
    with pytest.raises(ParameterError):
        SynthSpec("sine", duration_samples=0)


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic_and_bounded(kind):
    spec = SynthSpec(kind, {"freqs_hz": [10.0, 25.0], "amplitudes": [1.0, 0.5], "random_phase": True},
                     channels=2, duration_samples=400, noise_sigma=0.1, seed=11)
    a, b = gen_signal(spec), gen_signal(spec)
    assert np.array_equal(a.data, b.data) and a.channel_names == b.channel_names
    assert np.all(np.isfinite(a.data)) and np.abs(a.data).max() <= spec.bound()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_noise_bound(seed, sigma):
    spec = SynthSpec("noisy_sine", noise_sigma=sigma, seed=seed, duration_samples=200)
    assert np.abs(gen_signal(spec).data).max() <= spec.bound() + 1e-12


class TestCorpus:
    def test_counts_and_balance(self):
        trials = gen_corpus(10, seed=0)
        assert len(trials) == 20
        assert sum(t.mi_label == "real" for t in trials) == 10
        assert sum(t.chaos_label == "chaotic" for t in trials) == 10
        assert {t.mi_label for t in trials} == set(MI_CLASSES)

    def test_sine_trials_non_chaotic(self):
        for t in gen_corpus(12, seed=1):
            assert (t.source == "sine") == (t.chaos_label == "non_chaotic")
        assert {t.source for t in gen_corpus(4)} == {"sine", "logistic_map", "henon"}

    def test_dominant_frequency(self):
        for t in gen_corpus(4, seed=2, channels=1):
            x = t.recording.data[0]
            freqs = np.fft.rfftfreq(x.size, 1 / 160.0)
            spec = np.abs(np.fft.rfft(x))
            spec[0] = 0.0
            target = 10.0 if t.mi_label == "real" else 25.0
            assert freqs[np.argmax(spec)] == target

    def test_deterministic(self):
        a, b = gen_corpus(3, seed=5), gen_corpus(3, seed=5)
        assert all(np.array_equal(x.recording.data, y.recording.data) for x, y in zip(a, b))
        assert not np.array_equal(a[0].recording.data, gen_corpus(3, seed=6)[0].recording.data)

    def test_entropy_orders_sources(self):
        trials = gen_corpus(20, seed=0, channels=1)
        h = {"logistic_map": [], "sine": []}
        for t in trials:
            if t.source in h:
                h[t.source].append(permutation_entropy(t.recording.data[0]))
        assert np.mean(h["logistic_map"]) > np.mean(h["sine"])

    def test_manifest(self):
        m = corpus_manifest(gen_corpus(2))
        assert [r["index"] for r in m] == [0, 1, 2, 3]
        assert set(m[0]) == {"index", "mi_label", "chaos_label", "source"}

    def test_errors(self):
        with pytest.raises(ParameterError):
            gen_corpus(0)
